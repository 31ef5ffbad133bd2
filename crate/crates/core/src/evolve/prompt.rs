//! Prompt text for language-model providers and parsing of their replies.

use alloc::string::String;
use alloc::vec::Vec;

use crate::ruledsl::{parse, validate, RuleProgram};

pub const MAX_PROMPT_BYTES: usize = 32 * 1024;

const GRAMMAR: &str = "\
A filter step is one S-expression:

  (rule :order update-predict|predict-update
    (let NAME EXPR)*
    (out :P-post EXPR :P-pred EXPR :x-post EXPR :x-pred EXPR))

EXPR is a number, a previous NAME, an input or (OP EXPR...).
Inputs: x (state mean, N), P (state covariance, NxN), z (observation, M),
H (MxN), F (NxN), Q (NxN), R (MxM), I (NxN identity), Im (MxM identity),
Inm (NxM zeros).
Ops: + and * (elementwise, two or more operands, scalars broadcast), - /,
neg, @ (matrix product), T (transpose), inv, mrdiv (A B -> A inv(B), B
symmetric positive definite), spd (symmetrize and repair), maximum, minimum,
tanh, abs, sign, exp, sqrt, (pow EXPR 2|3|4), (clip EXPR :hi H :lo L),
reductions to a scalar: mean, std, norm, max, trace, dot; outer.
Limits: 256 nodes, depth 16, numeric literals within [-1000, 1000].
Division, sqrt and exp are guarded; a non-finite value rejects the program.

Step contract: with update-predict the inputs x, P are the prior for the
current observation z; with predict-update they are the previous posterior.
The four outputs are the posterior and the one-step prediction.
";

/// Deterministic prompt asking for new rules, showing the parents as
/// examples. Parents that do not fit in the size budget are left out.
pub fn build_prompt(problem: &str, parents: &[RuleProgram]) -> String {
    let mut s = String::new();
    s.push_str("You are improving a recursive state estimator.\n\n");
    s.push_str("Task:\n");
    let room = MAX_PROMPT_BYTES / 4;
    let mut cut = problem.len().min(room);
    while !problem.is_char_boundary(cut) {
        cut -= 1;
    }
    s.push_str(&problem[..cut]);
    s.push_str("\n\n");
    s.push_str(GRAMMAR);
    s.push('\n');
    let tail = "Generate ten diverse rules that combine and mutate the examples to lower the \
                estimation error. Return each one in its own fenced code block.\n";
    for (k, p) in parents.iter().enumerate() {
        let block = alloc::format!("Example {}:\n```\n{}\n```\n\n", k + 1, p);
        if s.len() + block.len() + tail.len() > MAX_PROMPT_BYTES {
            break;
        }
        s.push_str(&block);
    }
    s.push_str(tail);
    s
}

/// Fenced blocks in `text`, each parsed and validated. Failures carry the
/// reason so callers can log them.
pub fn extract_candidates(text: &str) -> Vec<Result<RuleProgram, String>> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        // skip an info string such as ```lisp
        let body_start = after.find('\n').map_or(after.len(), |n| n + 1);
        let body = &after[body_start..];
        let Some(close) = body.find("```") else { break };
        let src = body[..close].trim();
        if !src.is_empty() {
            out.push(match parse(src) {
                Ok(p) => {
                    let rep = validate(&p);
                    if rep.ok {
                        Ok(p)
                    } else {
                        Err(alloc::format!("invalid: {}", rep.violations[0].rule))
                    }
                }
                Err(e) => Err(alloc::format!("unparseable: {e}")),
            });
        }
        rest = &body[close + 3..];
    }
    out
}
