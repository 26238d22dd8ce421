//! Trace files: JSON Lines with a versioned header line followed by one
//! record per replicate.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context};
use iud_core::{Scenario, TrialTrace};
use serde::{Deserialize, Serialize};

pub const FORMAT: &str = "iud-trace";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceHeader {
    pub format: String,
    pub version: u32,
    pub scenario: Scenario,
    pub mechanism: String,
    #[serde(default)]
    pub info_times: Vec<f64>,
}

impl TraceHeader {
    pub fn new(scenario: &Scenario, mechanism: &str, info_times: &[f64]) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            scenario: scenario.clone(),
            mechanism: mechanism.into(),
            info_times: info_times.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub replicate: u64,
    pub trace: TrialTrace,
}

pub fn write_traces<'a>(
    path: &Path,
    header: &TraceHeader,
    traces: impl IntoIterator<Item = (u64, &'a TrialTrace)>,
) -> anyhow::Result<()> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, header)?;
    w.write_all(b"\n")?;
    for (replicate, trace) in traces {
        serde_json::to_writer(
            &mut w,
            &TraceRecord {
                replicate,
                trace: trace.clone(),
            },
        )?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the header and the record of `replicate` (the first record when
/// `None`).
pub fn read_trace(
    path: &Path,
    replicate: Option<u64>,
) -> anyhow::Result<(TraceHeader, TraceRecord)> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines.next().context("trace file is empty")??;
    let header: TraceHeader = serde_json::from_str(&first).context("invalid trace header")?;
    if header.format != FORMAT {
        bail!("not a trace file (format {:?})", header.format);
    }
    if header.version != VERSION {
        bail!("unsupported trace version {}", header.version);
    }
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TraceRecord = serde_json::from_str(&line)
            .with_context(|| format!("invalid trace record on line {}", i + 2))?;
        if replicate.is_none_or(|r| r == record.replicate) {
            return Ok((header, record));
        }
    }
    match replicate {
        Some(r) => bail!("replicate {r} not found in {}", path.display()),
        None => bail!("{} holds no trace records", path.display()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use iud_core::{run_trial, TrialConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let s = Scenario::builtin("S_4").unwrap();
        let cfg = TrialConfig::default();
        let traces: Vec<TrialTrace> = (0..3)
            .map(|r| run_trial(&cfg, &s, &mut ChaCha8Rng::seed_from_u64(r)).unwrap())
            .collect();
        let header = TraceHeader::new(&s, "IUD1", &[0.5, 1.0]);
        write_traces(
            &path,
            &header,
            traces.iter().enumerate().map(|(r, t)| (r as u64, t)),
        )
        .unwrap();
        let (h, rec) = read_trace(&path, Some(2)).unwrap();
        assert_eq!(h, header);
        assert_eq!(rec.trace, traces[2]);
        assert_eq!(read_trace(&path, None).unwrap().1.replicate, 0);
        assert!(read_trace(&path, Some(7)).is_err());
    }
}
