//! Built-in problems and their scenario parameters.

use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamDoc {
    pub key: &'static str,
    pub kind: &'static str,
    pub default: &'static str,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProblemDoc {
    pub name: &'static str,
    pub summary: &'static str,
    pub params: &'static [ParamDoc],
}

pub const PROBLEMS: [ProblemDoc; 4] = [
    ProblemDoc {
        name: "nlp61",
        summary: "min 2(x1-1)^2 + (x2-2)^2 s.t. -1 - x1 x2 <= 0, -1.5 + x1 x2 <= 0; two agents",
        params: &[],
    },
    ProblemDoc {
        name: "example31",
        summary:
            "min 0.5 x1^2 + 0.5 x2^2 s.t. x1 + a x2 = 0 (agent 1), optionally x1 + x2 = 0 (agent 2)",
        params: &[
            ParamDoc {
                key: "a",
                kind: "number",
                default: "required",
            },
            ParamDoc {
                key: "with_g2",
                kind: "bool",
                default: "false",
            },
        ],
    },
    ProblemDoc {
        name: "example51",
        summary: "min x1 x2 s.t. x1 - x2 = 0; two agents sharing the bilinear cost",
        params: &[],
    },
    ProblemDoc {
        name: "logreg",
        summary: "regularized logistic regression split across features, box-constrained blocks",
        params: &[
            ParamDoc {
                key: "m",
                kind: "count",
                default: "200",
            },
            ParamDoc {
                key: "n",
                kind: "count",
                default: "100",
            },
            ParamDoc {
                key: "agents",
                kind: "count dividing n",
                default: "10",
            },
            ParamDoc {
                key: "seed",
                kind: "u64",
                default: "1",
            },
            ParamDoc {
                key: "eps_reg",
                kind: "number >= 0",
                default: "0.1",
            },
            ParamDoc {
                key: "box",
                kind: "number > 0",
                default: "0.25",
            },
            ParamDoc {
                key: "feature_std",
                kind: "number > 0",
                default: "1",
            },
            ParamDoc {
                key: "noise_var",
                kind: "number >= 0",
                default: "0.1",
            },
        ],
    },
];

pub fn lookup(name: &str) -> Option<&'static ProblemDoc> {
    PROBLEMS.iter().find(|p| p.name == name)
}

pub fn listing() -> String {
    let mut s = String::new();
    for p in &PROBLEMS {
        let _ = writeln!(s, "{}\n  {}", p.name, p.summary);
        if p.params.is_empty() {
            let _ = writeln!(s, "  (no parameters)");
        }
        for d in p.params {
            let _ = writeln!(s, "  {:<12} {:<18} default {}", d.key, d.kind, d.default);
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lists_parameters() {
        let ex = lookup("example31").unwrap();
        let keys: Vec<_> = ex.params.iter().map(|p| p.key).collect();
        assert_eq!(keys, ["a", "with_g2"]);
        assert!(lookup("example51").unwrap().params.is_empty());
        assert!(lookup("example99").is_none());
        assert!(listing().contains("logreg"));
    }
}
