//! Sampled closed-loop record and its CSV form.

use std::io::{BufWriter, Read, Write};

use crate::error::{PetcError, Result};
use crate::scalar::{format_real, from_usize, lit, to_f64, Scalar};
use crate::trigger::{TriggerDecision, TriggerReason};

/// One row per sampling index `z`, time `z·h`.
///
/// `held` and `inputs` hold the actuator state after the decision at `z`,
/// i.e. the values applied on `[z·h, (z+1)·h)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog<T> {
    pub state_dim: usize,
    pub input_dim: usize,
    pub h: T,
    pub states: Vec<T>,
    pub held: Vec<T>,
    pub inputs: Vec<T>,
    pub lyapunov: Vec<T>,
    /// Comparison envelope `S(z·h)`.
    pub reference: Vec<T>,
    pub sent: Vec<bool>,
    pub delivered: Vec<bool>,
    pub reasons: Vec<TriggerReason>,
    pub sigma_z: Vec<T>,
    pub threshold: Vec<T>,
}

impl<T: Scalar> TrajectoryLog<T> {
    pub fn with_capacity(state_dim: usize, input_dim: usize, h: T, rows: usize) -> Self {
        TrajectoryLog {
            state_dim,
            input_dim,
            h,
            states: Vec::with_capacity(rows * state_dim),
            held: Vec::with_capacity(rows * state_dim),
            inputs: Vec::with_capacity(rows * input_dim),
            lyapunov: Vec::with_capacity(rows),
            reference: Vec::with_capacity(rows),
            sent: Vec::with_capacity(rows),
            delivered: Vec::with_capacity(rows),
            reasons: Vec::with_capacity(rows),
            sigma_z: Vec::with_capacity(rows),
            threshold: Vec::with_capacity(rows),
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn push(
        &mut self,
        x: &[T],
        xhat: &[T],
        u: &[T],
        v: T,
        s: T,
        decision: &TriggerDecision<T>,
        delivered: bool,
    ) {
        self.states.extend_from_slice(x);
        self.held.extend_from_slice(xhat);
        self.inputs.extend_from_slice(u);
        self.lyapunov.push(v);
        self.reference.push(s);
        self.sent.push(decision.send);
        self.delivered.push(delivered);
        self.reasons.push(decision.reason);
        self.sigma_z.push(decision.sigma_z);
        self.threshold.push(decision.threshold);
    }

    pub fn len(&self) -> usize {
        self.lyapunov.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lyapunov.is_empty()
    }

    pub fn time(&self, z: usize) -> T {
        from_usize::<T>(z) * self.h
    }

    pub fn x(&self, z: usize) -> &[T] {
        &self.states[z * self.state_dim..(z + 1) * self.state_dim]
    }

    pub fn xhat(&self, z: usize) -> &[T] {
        &self.held[z * self.state_dim..(z + 1) * self.state_dim]
    }

    pub fn u(&self, z: usize) -> &[T] {
        &self.inputs[z * self.input_dim..(z + 1) * self.input_dim]
    }

    /// Sampling indices of successful transmissions (index 0 included).
    pub fn transmission_indices(&self) -> Vec<usize> {
        self.delivered.iter().enumerate().filter_map(|(z, &d)| d.then_some(z)).collect()
    }

    /// Gaps between consecutive successful transmissions, in seconds.
    pub fn success_gaps(&self) -> Vec<T> {
        self.transmission_indices()
            .windows(2)
            .map(|w| from_usize::<T>(w[1] - w[0]) * self.h)
            .collect()
    }

    pub fn send_count(&self) -> usize {
        self.sent.iter().filter(|&&s| s).count()
    }

    pub fn success_count(&self) -> usize {
        self.delivered.iter().filter(|&&d| d).count()
    }

    /// Failed transmissions since the last success, as seen by the trigger
    /// when it evaluated index `z` (before that index's own attempt).
    pub fn failures_before(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.len());
        let mut m_bar = 0usize;
        for z in 0..self.len() {
            out.push(m_bar);
            if self.delivered[z] {
                m_bar = 0;
            } else if self.sent[z] {
                m_bar += 1;
            }
        }
        out
    }

    fn header(&self) -> String {
        let mut cols = vec!["z".to_string(), "t".to_string()];
        cols.extend((0..self.state_dim).map(|k| format!("x{k}")));
        cols.extend((0..self.state_dim).map(|k| format!("xhat{k}")));
        cols.extend((0..self.input_dim).map(|k| format!("u{k}")));
        for c in ["V", "S", "sent", "delivered", "reason", "sigma_z", "threshold"] {
            cols.push(c.to_string());
        }
        cols.join(",")
    }

    /// Writes the log as CSV; reals use 17 significant digits.
    pub fn write_csv<W: Write>(&self, writer: W) -> std::io::Result<()> {
        let mut w = BufWriter::new(writer);
        writeln!(w, "{}", self.header())?;
        let r = |v: T| format_real(to_f64(v));
        let mut line = String::with_capacity(256);
        for z in 0..self.len() {
            line.clear();
            line.push_str(&z.to_string());
            line.push(',');
            line.push_str(&r(self.time(z)));
            for &v in self.x(z).iter().chain(self.xhat(z)).chain(self.u(z)) {
                line.push(',');
                line.push_str(&r(v));
            }
            for v in [self.lyapunov[z], self.reference[z]] {
                line.push(',');
                line.push_str(&r(v));
            }
            line.push_str(if self.sent[z] { ",1" } else { ",0" });
            line.push_str(if self.delivered[z] { ",1," } else { ",0," });
            line.push_str(self.reasons[z].as_str());
            for v in [self.sigma_z[z], self.threshold[z]] {
                line.push(',');
                line.push_str(&r(v));
            }
            line.push('\n');
            w.write_all(line.as_bytes())?;
        }
        w.flush()
    }

    /// Parses a log written by [`TrajectoryLog::write_csv`].
    ///
    /// Every row must be newline-terminated; a missing final newline means
    /// the file was cut short.
    pub fn read_csv<R: Read>(mut reader: R) -> Result<Self> {
        let mut text = String::new();
        reader.read_to_string(&mut text).map_err(|e| PetcError::Parse(e.to_string()))?;
        if !text.ends_with('\n') {
            return Err(PetcError::Parse("log is truncated (last row not terminated)".into()));
        }
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let headers = rdr.headers().map_err(|e| PetcError::Parse(e.to_string()))?.clone();
        let count = |prefix: &str| {
            headers
                .iter()
                .filter(|h| h.strip_prefix(prefix).is_some_and(|rest| !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit())))
                .count()
        };
        let n = count("x");
        let b = count("u");
        if n == 0 || b == 0 || count("xhat") != n {
            return Err(PetcError::Parse("log header lacks state/input columns".into()));
        }
        let expected = 2 + 2 * n + b + 7;
        if headers.len() != expected {
            return Err(PetcError::Parse(format!("expected {expected} columns, header has {}", headers.len())));
        }
        let mut log = TrajectoryLog::with_capacity(n, b, T::zero(), 0);
        let mut times = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| PetcError::Parse(format!("row {}: {e}", row + 1)))?;
            if rec.len() != expected {
                return Err(PetcError::Parse(format!("row {} has {} fields, expected {expected}", row + 1, rec.len())));
            }
            let real = |i: usize| -> Result<T> {
                rec[i]
                    .parse::<f64>()
                    .map(lit::<T>)
                    .map_err(|_| PetcError::Parse(format!("row {}: bad number {:?}", row + 1, &rec[i])))
            };
            let flag = |i: usize| -> Result<bool> {
                match &rec[i] {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    other => Err(PetcError::Parse(format!("row {}: bad flag {other:?}", row + 1))),
                }
            };
            let z: usize = rec[0].parse().map_err(|_| PetcError::Parse(format!("row {}: bad index", row + 1)))?;
            if z != row {
                return Err(PetcError::Parse(format!("row {} has index {z}", row + 1)));
            }
            times.push(real(1)?);
            for i in 2..2 + n {
                log.states.push(real(i)?);
            }
            for i in 2 + n..2 + 2 * n {
                log.held.push(real(i)?);
            }
            for i in 2 + 2 * n..2 + 2 * n + b {
                log.inputs.push(real(i)?);
            }
            let base = 2 + 2 * n + b;
            log.lyapunov.push(real(base)?);
            log.reference.push(real(base + 1)?);
            log.sent.push(flag(base + 2)?);
            log.delivered.push(flag(base + 3)?);
            log.reasons.push(
                TriggerReason::parse(&rec[base + 4])
                    .ok_or_else(|| PetcError::Parse(format!("row {}: bad reason {:?}", row + 1, &rec[base + 4])))?,
            );
            log.sigma_z.push(real(base + 5)?);
            log.threshold.push(real(base + 6)?);
        }
        if times.len() < 2 {
            return Err(PetcError::Parse("log needs at least two rows".into()));
        }
        log.h = times[1] - times[0];
        if !(log.h > T::zero()) {
            return Err(PetcError::Parse("non-increasing time column".into()));
        }
        Ok(log)
    }
}
