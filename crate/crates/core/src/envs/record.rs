//! Episode recordings as JSON lines.
//!
//! The first line is a [`Header`] with the config and the reset outputs; each
//! following line is one [`Frame`] holding the joint action and the
//! resulting [`StepResult`].

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{env_reset, EnvConfig, Observation, StepResult};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub config: EnvConfig,
    pub observations: Vec<Observation>,
    pub global_state: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub actions: Vec<usize>,
    pub result: StepResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub header: Header,
    pub frames: Vec<Frame>,
}

impl Recording {
    /// Runs `actions` from a fresh reset, stopping early if the episode ends.
    pub fn capture(config: &EnvConfig, actions: &[Vec<usize>]) -> Result<Self> {
        let (mut state, observations, global_state) = env_reset(config)?;
        let mut frames = Vec::new();
        for a in actions {
            let result = state.step(a)?;
            let done = result.done;
            frames.push(Frame {
                actions: a.clone(),
                result,
            });
            if done {
                break;
            }
        }
        Ok(Self {
            header: Header {
                config: config.clone(),
                observations,
                global_state,
            },
            frames,
        })
    }

    /// Re-runs the recorded actions and checks every result matches exactly.
    /// Returns the index of the first diverging step, if any.
    pub fn replay(&self) -> Result<Option<usize>> {
        let (mut state, obs, gs) = env_reset(&self.header.config)?;
        if obs != self.header.observations || gs != self.header.global_state {
            return Ok(Some(0));
        }
        for (t, f) in self.frames.iter().enumerate() {
            if state.step(&f.actions)? != f.result {
                return Ok(Some(t + 1));
            }
        }
        Ok(None)
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer(&mut w, &self.header)?;
        w.write_all(b"\n")?;
        for f in &self.frames {
            serde_json::to_writer(&mut w, f)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let first = lines
            .next()
            .ok_or_else(|| Error::Format("empty recording".into()))??;
        let header: Header = serde_json::from_str(&first)?;
        let mut frames = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            frames.push(serde_json::from_str(&line)?);
        }
        Ok(Self { header, frames })
    }
}
