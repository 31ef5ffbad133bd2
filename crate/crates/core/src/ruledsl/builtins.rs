use alloc::vec::Vec;

use super::{parse, RuleProgram};

pub const BUILTIN_NAMES: [&str; 4] = ["kf-canonical", "gated-mot", "free-nsp", "free-se"];

const CANONICAL: &str = "
(rule :order update-predict
  (let y (- z (@ H x)))
  (let S (+ (@ (@ H P) (T H)) R))
  (let K (mrdiv (@ P (T H)) S))
  (let xu (+ x (@ K y)))
  (let Pu (spd (@ (- I (@ K H)) P)))
  (out :P-post Pu
       :P-pred (+ (@ (@ F Pu) (T F)) Q)
       :x-post xu
       :x-pred (@ F xu)))";

// innovation-gated update with a residual-driven process noise scale
const GATED_MOT: &str = "
(rule :order update-predict
  (let y (- z (@ H x)))
  (let S (+ (+ (@ (@ H P) (T H)) R) (* 1e-10 Im)))
  (let K (@ (@ P (T H)) (inv S)))
  (let gate (* 0.5 (+ 1 (tanh (+ (mean (pow y 4)) (pow (std (pow y 2)) 2))))))
  (let xu (+ x (@ (* gate K) y)))
  (let Pu (@ (- I (@ (* gate K) H)) P))
  (let alpha (tanh (+ (mean (pow y 2)) (std (pow y 2)))))
  (out :P-post Pu
       :P-pred (+ (@ (@ F Pu) (T F)) (* alpha Q))
       :x-post xu
       :x-pred (@ F xu)))";

const GATED_MOT_PINNED: &str = "
(rule :order update-predict
  (let y (- z (@ H x)))
  (let S (+ (+ (@ (@ H P) (T H)) R) (* 1e-10 Im)))
  (let K (@ (@ P (T H)) (inv S)))
  (let xu (+ x (@ K y)))
  (let Pu (@ (- I (@ K H)) P))
  (out :P-post Pu
       :P-pred (+ (@ (@ F Pu) (T F)) Q)
       :x-post xu
       :x-pred (@ F xu)))";

// clipped residual, blended posterior, Joseph covariance with shrinkage
const FREE_NSP: &str = "
(rule :order update-predict
  (let y0 (- z (@ H x)))
  (let y (+ (maximum y0 -10) (minimum y0 10)))
  (let S (+ (@ (@ H P) (T H)) R))
  (let Si (inv (+ S (* 1e-8 Im))))
  (let K (@ (@ P (T H)) Si))
  (let xk (+ x (@ K y)))
  (let xu (+ (* xk 0.9) (* (@ (T H) z) 0.1)))
  (let A (- I (@ K H)))
  (let Pj (+ (@ (@ A P) (T A)) (@ (@ K R) (T K))))
  (let Pu (* Pj 0.8))
  (out :P-post Pu
       :P-pred (+ (@ (@ F Pu) (T F)) Q)
       :x-post xu
       :x-pred (@ F xu)))";

const FREE_NSP_PINNED: &str = "
(rule :order update-predict
  (let y (- z (@ H x)))
  (let S (+ (@ (@ H P) (T H)) R))
  (let K (@ (@ P (T H)) (inv S)))
  (let xu (+ x (@ K y)))
  (let A (- I (@ K H)))
  (let Pu (+ (@ (@ A P) (T A)) (@ (@ K R) (T K))))
  (out :P-post Pu
       :P-pred (+ (@ (@ F Pu) (T F)) Q)
       :x-post xu
       :x-pred (@ F xu)))";

// predict first, damped noise, gain blended towards its sign pattern
const FREE_SE: &str = "
(rule :order predict-update
  (let xp (@ F x))
  (let Pp (+ (@ (@ F P) (T F)) (* Q 0.95)))
  (let y (- z (@ H xp)))
  (let S0 (+ (+ (@ (@ H Pp) (T H)) (* R 0.8)) (* 1e-12 Im)))
  (let S (maximum S0 1e-14))
  (let K0 (@ (@ Pp (T H)) (inv S)))
  (let K (+ (* K0 0.65) (* (* (* 0.35 (sign K0)) (max (abs K0))) Inm)))
  (let xu (+ xp (@ K y)))
  (let Pu (clip (* (@ (- I (@ K H)) Pp) 0.85) :hi 250 :lo 1e-20))
  (out :P-post Pu
       :P-pred Pp
       :x-post xu
       :x-pred xp))";

const FREE_SE_PINNED: &str = "
(rule :order predict-update
  (let xp (@ F x))
  (let Pp (+ (@ (@ F P) (T F)) Q))
  (let y (- z (@ H xp)))
  (let S (+ (@ (@ H Pp) (T H)) R))
  (let K (@ (@ Pp (T H)) (inv S)))
  (let xu (+ xp (@ K y)))
  (let Pu (@ (- I (@ K H)) Pp))
  (out :P-post Pu
       :P-pred Pp
       :x-post xu
       :x-pred xp))";

fn load(text: &str) -> RuleProgram {
    parse(text).expect("builtin program must parse")
}

/// The textbook update followed by the textbook prediction.
pub fn canonical_kf_program() -> RuleProgram {
    load(CANONICAL)
}

pub fn builtin(name: &str) -> Option<RuleProgram> {
    let text = match name {
        "kf-canonical" => CANONICAL,
        "gated-mot" => GATED_MOT,
        "free-nsp" => FREE_NSP,
        "free-se" => FREE_SE,
        _ => return None,
    };
    Some(load(text))
}

/// A builtin with its gates and scale factors set to 1 and its jitter
/// terms removed. Algebraically equal to the canonical filter.
pub fn builtin_pinned(name: &str) -> Option<RuleProgram> {
    let text = match name {
        "kf-canonical" => CANONICAL,
        "gated-mot" => GATED_MOT_PINNED,
        "free-nsp" => FREE_NSP_PINNED,
        "free-se" => FREE_SE_PINNED,
        _ => return None,
    };
    Some(load(text))
}

pub fn builtin_library() -> Vec<(&'static str, RuleProgram)> {
    BUILTIN_NAMES.iter().map(|n| (*n, builtin(n).expect("listed builtin"))).collect()
}
