use std::fs::{File, OpenOptions};
use std::io::{BufRead, Write};
use std::path::Path;

use anyhow::{Context, Result};
use car_core::engine::parse_event_log;
use car_core::{Arm, TrialConfig, TrialState, UnitRecord};
use serde::Serialize;

#[derive(Serialize)]
struct Allocated<'a> {
    unit_index: u64,
    arm: Arm,
    prob: f64,
    lambda: &'a [f64],
}

#[derive(Serialize)]
struct LineError<'a> {
    line: usize,
    code: &'a str,
    error: String,
}

fn open_log(path: &Path, config: &TrialConfig) -> Result<(TrialState, File)> {
    let state = if path.exists() {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let events = parse_event_log(&text)?;
        TrialState::replay(config.clone(), &events)?
    } else {
        TrialState::new(config.clone())?
    };
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    Ok((state, file))
}

/// One JSON record in, one JSON line out. Bad records produce an error line
/// and leave the trial untouched.
pub fn run(config: TrialConfig, log: Option<&Path>, input: impl BufRead, mut out: impl Write) -> Result<()> {
    let (mut state, mut file) = match log {
        Some(p) => {
            let (s, f) = open_log(p, &config)?;
            (s, Some(f))
        }
        None => (TrialState::new(config)?, None),
    };
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let enrolled = UnitRecord::parse(&line).and_then(|r| state.enroll_with_draw(r.x(), r.u()));
        match enrolled {
            Ok((a, ev)) => {
                if let Some(f) = file.as_mut() {
                    writeln!(f, "{}", ev.to_json_line())?;
                    f.sync_data()?;
                }
                let reply = Allocated {
                    unit_index: ev.unit_index,
                    arm: a.arm,
                    prob: ev.prob,
                    lambda: &ev.lambda,
                };
                writeln!(out, "{}", serde_json::to_string(&reply)?)?;
            }
            Err(e) => {
                let reply = LineError {
                    line: i + 1,
                    code: e.code(),
                    error: e.to_string(),
                };
                writeln!(out, "{}", serde_json::to_string(&reply)?)?;
            }
        }
        out.flush()?;
    }
    Ok(())
}

