//! Learner checkpoints: a line-oriented text document carrying every
//! dimension and parameter array in decimal.
//!
//! Floats use Rust's shortest round-trip formatting (at most 17
//! significant digits), so save → load reproduces the learner bit-exactly.
//!
//! ```text
//! #cil-checkpoint v1
//! phase <i>
//! old_classes <n>
//! new_classes <n>
//! layers <L>
//! layer <in> <out> <relu|identity>
//! w <f> <f> ...          (row-major)
//! b <f> ...
//! classes <K>
//! class <frozen 0|1> <bias> <w> <w> ...
//! ```

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::model::{Activation, ClassEntry, ClassifierParams, ExtractorParams, Layer, LearnerState};

pub fn save_checkpoint(learner: &LearnerState, path: &Path) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "#cil-checkpoint v1").unwrap();
    writeln!(out, "phase {}", learner.phase_index).unwrap();
    writeln!(out, "old_classes {}", learner.old_class_count).unwrap();
    writeln!(out, "new_classes {}", learner.new_class_count).unwrap();
    writeln!(out, "layers {}", learner.extractor.layers().len()).unwrap();
    for layer in learner.extractor.layers() {
        let act = match layer.activation {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        };
        writeln!(out, "layer {} {} {}", layer.weight.cols(), layer.weight.rows(), act).unwrap();
        writeln!(out, "w {}", join_floats(layer.weight.as_slice())).unwrap();
        writeln!(out, "b {}", join_floats(layer.bias.as_slice())).unwrap();
    }
    writeln!(out, "classes {}", learner.classifier.class_count()).unwrap();
    for (k, entry) in learner.classifier.entries().iter().enumerate() {
        writeln!(
            out,
            "class {} {} {}",
            u8::from(learner.classifier.is_frozen(k)),
            entry.bias,
            join_floats(entry.weight.as_slice())
        )
        .unwrap();
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn join_floats(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

struct LineReader<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> LineReader<'a> {
    fn next(&mut self) -> Result<(usize, &'a str)> {
        for (idx, line) in self.lines.by_ref() {
            if !line.trim().is_empty() {
                return Ok((idx + 1, line));
            }
        }
        Err(Error::Parse { line: 0, msg: "unexpected end of checkpoint".into() })
    }

    /// Next line, which must start with `keyword`; returns the remainder.
    fn expect(&mut self, keyword: &str) -> Result<(usize, &'a str)> {
        let (no, line) = self.next()?;
        line.strip_prefix(keyword)
            .map(|rest| (no, rest.trim()))
            .ok_or_else(|| Error::Parse {
                line: no,
                msg: format!("expected {keyword:?}, got {line:?}"),
            })
    }
}

fn parse_usize(line: usize, text: &str) -> Result<usize> {
    text.trim().parse().map_err(|_| Error::Parse {
        line,
        msg: format!("bad integer {text:?}"),
    })
}

fn parse_floats(line: usize, text: &str, expected: usize) -> Result<Vec<f64>> {
    let values: Vec<f64> = text
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>().map_err(|_| Error::Parse {
                line,
                msg: format!("bad float {t:?}"),
            })
        })
        .collect::<Result<_>>()?;
    if values.len() != expected {
        return Err(Error::Parse {
            line,
            msg: format!("expected {expected} values, got {}", values.len()),
        });
    }
    Ok(values)
}

pub fn load_checkpoint(path: &Path) -> Result<LearnerState> {
    let text = std::fs::read_to_string(path)?;
    let mut reader = LineReader { lines: text.lines().enumerate() };

    let (no, header) = reader.next()?;
    if header.trim() != "#cil-checkpoint v1" {
        return Err(Error::Parse { line: no, msg: "expected '#cil-checkpoint v1' header".into() });
    }
    let (no, rest) = reader.expect("phase")?;
    let phase_index = parse_usize(no, rest)?;
    let (no, rest) = reader.expect("old_classes")?;
    let old_class_count = parse_usize(no, rest)?;
    let (no, rest) = reader.expect("new_classes")?;
    let new_class_count = parse_usize(no, rest)?;
    let (no, rest) = reader.expect("layers")?;
    let n_layers = parse_usize(no, rest)?;

    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let (no, rest) = reader.expect("layer")?;
        let mut parts = rest.split_whitespace();
        let (cols, rows, act) = match (parts.next(), parts.next(), parts.next()) {
            (Some(c), Some(r), Some(a)) => (parse_usize(no, c)?, parse_usize(no, r)?, a),
            _ => {
                return Err(Error::Parse {
                    line: no,
                    msg: "layer needs '<in> <out> <activation>'".into(),
                })
            }
        };
        let activation = match act {
            "relu" => Activation::Relu,
            "identity" => Activation::Identity,
            other => {
                return Err(Error::Parse {
                    line: no,
                    msg: format!("unknown activation {other:?}"),
                })
            }
        };
        let (no, rest) = reader.expect("w")?;
        let w = parse_floats(no, rest, rows * cols)?;
        let (no, rest) = reader.expect("b")?;
        let b = parse_floats(no, rest, rows)?;
        layers.push(Layer {
            weight: Matrix::new(rows, cols, w),
            bias: Vector::new(b),
            activation,
        });
    }
    let extractor = ExtractorParams::from_layers(layers)
        .map_err(|e| Error::Parse { line: 0, msg: format!("inconsistent layers: {e}") })?;

    let (no, rest) = reader.expect("classes")?;
    let n_classes = parse_usize(no, rest)?;
    if old_class_count + new_class_count != n_classes {
        return Err(Error::Parse {
            line: no,
            msg: format!(
                "class counts disagree: {old_class_count} old + {new_class_count} new != {n_classes}"
            ),
        });
    }
    let mut classifier = ClassifierParams::empty(extractor.embedding_dim());
    for _ in 0..n_classes {
        let (no, rest) = reader.expect("class")?;
        let mut parts = rest.splitn(3, ' ');
        let (frozen, bias, weights) = match (parts.next(), parts.next(), parts.next()) {
            (Some(f), Some(b), Some(w)) => (f, b, w),
            _ => {
                return Err(Error::Parse {
                    line: no,
                    msg: "class needs '<frozen> <bias> <weights...>'".into(),
                })
            }
        };
        let frozen = match frozen {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::Parse {
                    line: no,
                    msg: format!("frozen flag must be 0 or 1, got {other:?}"),
                })
            }
        };
        let bias: f64 = bias.parse().map_err(|_| Error::Parse {
            line: no,
            msg: format!("bad bias {bias:?}"),
        })?;
        let weight = parse_floats(no, weights, extractor.embedding_dim())?;
        classifier.push_entry(
            ClassEntry {
                weight: Vector::new(weight),
                bias,
            },
            frozen,
        );
    }

    Ok(LearnerState {
        extractor,
        classifier,
        phase_index,
        old_class_count,
        new_class_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ExtractorConfig;

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let cfg = ExtractorConfig::new(5, vec![7, 6], 4);
        let mut learner = LearnerState::fresh(&cfg, 3, 0.01, 11, 12).unwrap();
        learner.phase_index = 2;
        learner.old_class_count = 2;
        learner.new_class_count = 1;
        learner.classifier.freeze_classes(1);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("learner.ckpt");
        save_checkpoint(&learner, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(learner, back);
        assert!(back.classifier.is_frozen(0));
        assert!(!back.classifier.is_frozen(1));
    }

    #[test]
    fn truncated_checkpoint_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, "#cil-checkpoint v1\nphase 0\n").unwrap();
        assert!(matches!(
            load_checkpoint(&path).unwrap_err(),
            Error::Parse { .. }
        ));
    }

    #[test]
    fn inconsistent_class_counts_are_rejected() {
        let cfg = ExtractorConfig::new(2, vec![], 2);
        let learner = LearnerState::fresh(&cfg, 2, 0.0, 0, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("learner.ckpt");
        save_checkpoint(&learner, &path).unwrap();
        let mangled = std::fs::read_to_string(&path)
            .unwrap()
            .replace("new_classes 2", "new_classes 3");
        std::fs::write(&path, mangled).unwrap();
        assert!(matches!(
            load_checkpoint(&path).unwrap_err(),
            Error::Parse { .. }
        ));
    }
}
