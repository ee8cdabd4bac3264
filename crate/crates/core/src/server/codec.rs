//! Line codec for the environment protocol.
//!
//! One message per line, UTF-8, terminated by `\n`:
//!
//! ```text
//! line   = kind *(" " field) "\n"
//! field  = name "=" value
//! ```
//!
//! Fields may appear in any order; each must appear exactly once. Values:
//!
//! - integers and flags (`0`/`1`) in decimal;
//! - floats as the shortest decimal that parses back to the same `f64`,
//!   with `inf`, `-inf` and `NaN` for non-finite values;
//! - lists separated by `,` (empty list = empty value), nested lists by `;`;
//! - text with `\\`, `\n`, `\r`, `\t` and `\s` (space) escaped.
//!
//! | kind | direction | fields |
//! |---|---|---|
//! | `hello` | both | `version`; server adds `relays`, `state_dim`, `window` |
//! | `reset` | request | `seed` |
//! | `step` | request | `actions` (one action index per relay) |
//! | `close` | both | none |
//! | `obs` | response | `step`, `done`, `voltage`, `current` (per relay, `;` separated windows), `closed`, `counter`, `rewards` |
//! | `error` | response | `message` |

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::env::RelayObservation;
use crate::error::{Error, Result};

pub const PROTOCOL_VERSION: u32 = 1;

/// Environment shape reported by the server in its `hello`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnvInfo {
    pub relays: usize,
    pub state_dim: usize,
    pub window: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum WireMessage {
    Hello {
        version: u32,
        info: Option<EnvInfo>,
    },
    Reset {
        seed: u64,
    },
    Step {
        actions: Vec<usize>,
    },
    Close,
    Obs {
        step: usize,
        observations: Vec<RelayObservation>,
        /// Empty after a reset.
        rewards: Vec<f64>,
        done: bool,
    },
    Error {
        message: String,
    },
}

impl WireMessage {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Hello { .. } => "hello",
            Self::Reset { .. } => "reset",
            Self::Step { .. } => "step",
            Self::Close => "close",
            Self::Obs { .. } => "obs",
            Self::Error { .. } => "error",
        }
    }

    pub fn error(message: impl Into<String>) -> Self {
        Self::Error {
            message: message.into(),
        }
    }
}

fn join<T>(items: &[T], sep: char, mut f: impl FnMut(&mut String, &T)) -> String {
    let mut out = String::new();
    for (i, item) in items.iter().enumerate() {
        if i > 0 {
            out.push(sep);
        }
        f(&mut out, item);
    }
    out
}

fn floats(values: &[f64]) -> String {
    join(values, ',', |s, v| {
        let _ = write!(s, "{v}");
    })
}

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            ' ' => out.push_str("\\s"),
            c => out.push(c),
        }
    }
    out
}

/// Encodes a message as one line, including the trailing newline.
pub fn encode(msg: &WireMessage) -> String {
    let mut line = String::from(msg.kind());
    let mut field = |name: &str, value: String| {
        let _ = write!(line, " {name}={value}");
    };
    match msg {
        WireMessage::Hello { version, info } => {
            field("version", version.to_string());
            if let Some(i) = info {
                field("relays", i.relays.to_string());
                field("state_dim", i.state_dim.to_string());
                field("window", i.window.to_string());
            }
        }
        WireMessage::Reset { seed } => field("seed", seed.to_string()),
        WireMessage::Step { actions } => field(
            "actions",
            join(actions, ',', |s, a| {
                let _ = write!(s, "{a}");
            }),
        ),
        WireMessage::Close => {}
        WireMessage::Obs {
            step,
            observations,
            rewards,
            done,
        } => {
            field("step", step.to_string());
            field("done", u8::from(*done).to_string());
            field(
                "voltage",
                join(observations, ';', |s, o| s.push_str(&floats(&o.voltage_window))),
            );
            field(
                "current",
                join(observations, ';', |s, o| s.push_str(&floats(&o.current_window))),
            );
            field(
                "closed",
                join(observations, ',', |s, o| {
                    s.push(if o.breaker_closed { '1' } else { '0' })
                }),
            );
            field(
                "counter",
                join(observations, ',', |s, o| {
                    let _ = write!(s, "{}", o.counter);
                }),
            );
            field("rewards", floats(rewards));
        }
        WireMessage::Error { message } => field("message", escape(message)),
    }
    line.push('\n');
    line
}

struct Fields<'a> {
    map: BTreeMap<&'a str, (usize, &'a str)>,
}

impl<'a> Fields<'a> {
    fn get(&self, name: &str) -> Result<(usize, &'a str)> {
        self.map.get(name).copied().ok_or_else(|| Error::Decode {
            offset: 0,
            msg: format!("missing field `{name}`"),
        })
    }

    fn parse<T: std::str::FromStr>(&self, name: &str) -> Result<T> {
        let (offset, value) = self.get(name)?;
        value.parse().map_err(|_| Error::Decode {
            offset,
            msg: format!("bad value for `{name}`"),
        })
    }

    fn list<T: std::str::FromStr>(&self, name: &str) -> Result<Vec<T>> {
        let (offset, value) = self.get(name)?;
        parse_list(value, offset, name)
    }

    fn nested(&self, name: &str) -> Result<Vec<Vec<f64>>> {
        let (offset, value) = self.get(name)?;
        let mut out = Vec::new();
        if value.is_empty() {
            return Ok(out);
        }
        let mut at = offset;
        for part in value.split(';') {
            out.push(parse_list(part, at, name)?);
            at += part.len() + 1;
        }
        Ok(out)
    }

    fn flag(&self, name: &str) -> Result<bool> {
        match self.get(name)? {
            (_, "0") => Ok(false),
            (_, "1") => Ok(true),
            (offset, _) => Err(Error::Decode {
                offset,
                msg: format!("`{name}` must be 0 or 1"),
            }),
        }
    }

    fn allow_only(&self, names: &[&str]) -> Result<()> {
        match self.map.iter().find(|(k, _)| !names.contains(k)) {
            Some((k, (offset, _))) => Err(Error::Decode {
                offset: offset - k.len() - 1,
                msg: format!("unexpected field `{k}`"),
            }),
            None => Ok(()),
        }
    }
}

fn parse_list<T: std::str::FromStr>(value: &str, offset: usize, name: &str) -> Result<Vec<T>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    let mut at = offset;
    for item in value.split(',') {
        out.push(item.parse().map_err(|_| Error::Decode {
            offset: at,
            msg: format!("bad element in `{name}`"),
        })?);
        at += item.len() + 1;
    }
    Ok(out)
}

fn unescape(text: &str, offset: usize) -> Result<String> {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.char_indices();
    while let Some((i, c)) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        out.push(match chars.next() {
            Some((_, '\\')) => '\\',
            Some((_, 'n')) => '\n',
            Some((_, 'r')) => '\r',
            Some((_, 't')) => '\t',
            Some((_, 's')) => ' ',
            _ => {
                return Err(Error::Decode {
                    offset: offset + i,
                    msg: "bad escape sequence".into(),
                })
            }
        });
    }
    Ok(out)
}

/// Decodes one line. A single trailing `\n` (or `\r\n`) is accepted.
pub fn decode(line: &[u8]) -> Result<WireMessage> {
    let text = std::str::from_utf8(line).map_err(|e| Error::Decode {
        offset: e.valid_up_to(),
        msg: "invalid UTF-8".into(),
    })?;
    let text = text.strip_suffix('\n').unwrap_or(text);
    let text = text.strip_suffix('\r').unwrap_or(text);
    if let Some(pos) = text.find(['\n', '\r']) {
        return Err(Error::Decode {
            offset: pos,
            msg: "embedded line break".into(),
        });
    }
    let mut parts = text.split(' ');
    let kind = parts.next().unwrap_or_default();
    let mut map = BTreeMap::new();
    let mut offset = kind.len() + 1;
    for part in parts {
        let Some((name, value)) = part.split_once('=') else {
            return Err(Error::Decode {
                offset,
                msg: "expected name=value".into(),
            });
        };
        if map.insert(name, (offset + name.len() + 1, value)).is_some() {
            return Err(Error::Decode {
                offset,
                msg: format!("duplicate field `{name}`"),
            });
        }
        offset += part.len() + 1;
    }
    let f = Fields { map };
    let msg = match kind {
        "hello" => {
            let version = f.parse("version")?;
            if f.map.len() == 1 {
                WireMessage::Hello { version, info: None }
            } else {
                f.allow_only(&["version", "relays", "state_dim", "window"])?;
                WireMessage::Hello {
                    version,
                    info: Some(EnvInfo {
                        relays: f.parse("relays")?,
                        state_dim: f.parse("state_dim")?,
                        window: f.parse("window")?,
                    }),
                }
            }
        }
        "reset" => {
            f.allow_only(&["seed"])?;
            WireMessage::Reset { seed: f.parse("seed")? }
        }
        "step" => {
            f.allow_only(&["actions"])?;
            WireMessage::Step {
                actions: f.list("actions")?,
            }
        }
        "close" => {
            f.allow_only(&[])?;
            WireMessage::Close
        }
        "obs" => {
            f.allow_only(&["step", "done", "voltage", "current", "closed", "counter", "rewards"])?;
            let voltage = f.nested("voltage")?;
            let current = f.nested("current")?;
            let closed: Vec<u8> = f.list("closed")?;
            let counter: Vec<u8> = f.list("counter")?;
            let n = closed.len();
            if voltage.len() != n || current.len() != n || counter.len() != n {
                return Err(Error::Decode {
                    offset: 0,
                    msg: "per-relay fields disagree on the relay count".into(),
                });
            }
            if let Some(bad) = closed.iter().find(|c| **c > 1) {
                return Err(Error::Decode {
                    offset: f.get("closed")?.0,
                    msg: format!("breaker flag {bad} is not 0 or 1"),
                });
            }
            let observations = voltage
                .into_iter()
                .zip(current)
                .zip(closed.iter().zip(counter))
                .map(|((v, i), (c, k))| RelayObservation {
                    voltage_window: v,
                    current_window: i,
                    breaker_closed: *c == 1,
                    counter: k,
                })
                .collect();
            WireMessage::Obs {
                step: f.parse("step")?,
                observations,
                rewards: f.list("rewards")?,
                done: f.flag("done")?,
            }
        }
        "error" => {
            f.allow_only(&["message"])?;
            let (offset, value) = f.get("message")?;
            WireMessage::Error {
                message: unescape(value, offset)?,
            }
        }
        other => {
            return Err(Error::Decode {
                offset: 0,
                msg: format!("unknown message kind `{}`", other.chars().take(32).collect::<String>()),
            })
        }
    };
    Ok(msg)
}
