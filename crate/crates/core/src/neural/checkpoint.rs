//! Plain-text parameter checkpoints.
//!
//! ```text
//! mlp 1 100 50 16
//! act sigmoid relu
//! <one value per line, LowerExp, params.len() lines>
//! ```
//!
//! Values are written in Rust's shortest round-trip form, so a reload is
//! bit-exact.

use std::io::{self, BufRead, Write};

use thiserror::Error;

use super::mlp::{Activation, MlpSpec, ParamVector};

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
}

pub fn write_mlp<W: Write>(out: &mut W, spec: &MlpSpec, params: &ParamVector) -> io::Result<()> {
    let dims: Vec<String> = spec.dims().iter().map(usize::to_string).collect();
    writeln!(out, "mlp {}", dims.join(" "))?;
    let acts: Vec<&str> = spec.activations().iter().map(|a| a.name()).collect();
    writeln!(out, "act {}", acts.join(" ").trim_end())?;
    for v in params.iter() {
        writeln!(out, "{v:e}")?;
    }
    Ok(())
}

/// Line reader that tracks line numbers for error messages.
pub struct Lines<R> {
    inner: io::Lines<R>,
    pub line: usize,
}

impl<R: BufRead> Lines<R> {
    pub fn new(reader: R) -> Self {
        Lines {
            inner: reader.lines(),
            line: 0,
        }
    }

    pub fn next_line(&mut self) -> Result<String, CheckpointError> {
        self.line += 1;
        match self.inner.next() {
            Some(l) => Ok(l?),
            None => Err(self.error("unexpected end of file")),
        }
    }

    pub fn error(&self, message: impl Into<String>) -> CheckpointError {
        CheckpointError::Format {
            line: self.line,
            message: message.into(),
        }
    }
}

pub fn read_mlp<R: BufRead>(lines: &mut Lines<R>) -> Result<(MlpSpec, ParamVector), CheckpointError> {
    let header = lines.next_line()?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some("mlp") {
        return Err(lines.error("expected `mlp` header"));
    }
    let dims = parts
        .map(|p| p.parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| lines.error(format!("bad layer width: {e}")))?;
    let act_line = lines.next_line()?;
    let mut parts = act_line.split_whitespace();
    if parts.next() != Some("act") {
        return Err(lines.error("expected `act` line"));
    }
    let activations = parts
        .map(|p| match p {
            "sigmoid" => Ok(Activation::Sigmoid),
            "relu" => Ok(Activation::Relu),
            other => Err(lines.error(format!("unknown activation {other:?}"))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let spec = MlpSpec::new(dims, activations).map_err(|e| lines.error(e.to_string()))?;
    let mut values = Vec::with_capacity(spec.param_count());
    for _ in 0..spec.param_count() {
        let l = lines.next_line()?;
        let v: f64 = l
            .trim()
            .parse()
            .map_err(|_| lines.error(format!("bad value {l:?}")))?;
        values.push(v);
    }
    Ok((spec, ParamVector(values)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::mlp_init;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let spec = MlpSpec::three_layer(7, 2);
        let mut p = mlp_init(&spec, &mut ChaCha8Rng::seed_from_u64(3));
        p[0] = 1e-300;
        p[1] = -0.1;
        let mut buf = Vec::new();
        write_mlp(&mut buf, &spec, &p).unwrap();
        let (s2, p2) = read_mlp(&mut Lines::new(&buf[..])).unwrap();
        assert_eq!(s2, spec);
        assert_eq!(p2.fingerprint(), p.fingerprint());
    }

    #[test]
    fn truncated_file_reports_line() {
        let text = "mlp 1 2\nact\n0.5\n";
        match read_mlp(&mut Lines::new(text.as_bytes())) {
            Err(CheckpointError::Format { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
    }
}
