//! Interpreter for the command vocabulary understood by simulated nodes.
//!
//! `true`, `false`, `exit N`, `sleep N`, `echo ...`, `write-file PATH TEXT`
//! and `rm [-f|-rf] PATH|*`. Commands may be chained with `&&` or `;`.
//! Anything else succeeds and is recorded as intent only.

use std::time::Duration;

use crate::executor::Scratch;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimCommandOutcome {
    pub exit_code: i32,
    pub output: String,
    /// Commands outside the vocabulary, accepted without effect.
    pub intents: Vec<String>,
}

impl SimCommandOutcome {
    pub fn success(&self) -> bool {
        self.exit_code == 0
    }
}

/// Runs vocabulary commands against a scratch area. `sleep` waits on the
/// tokio timer.
pub struct SimShell<'a> {
    scratch: &'a dyn Scratch,
}

enum Sep {
    And,
    Seq,
}

fn split_chain(cmd: &str) -> Vec<(String, Sep)> {
    let mut out = Vec::new();
    let mut rest = cmd;
    loop {
        let and = rest.find("&&");
        let seq = rest.find(';');
        let (idx, len, sep) = match (and, seq) {
            (Some(a), Some(s)) if a < s => (a, 2, Sep::And),
            (Some(_), Some(s)) => (s, 1, Sep::Seq),
            (Some(a), None) => (a, 2, Sep::And),
            (None, Some(s)) => (s, 1, Sep::Seq),
            (None, None) => {
                out.push((rest.trim().to_string(), Sep::Seq));
                return out;
            }
        };
        out.push((rest[..idx].trim().to_string(), sep));
        rest = &rest[idx + len..];
    }
}

fn unquote(s: &str) -> String {
    let s = s.trim();
    if s.len() >= 2 && ((s.starts_with('"') && s.ends_with('"')) || (s.starts_with('\'') && s.ends_with('\''))) {
        s[1..s.len() - 1].to_string()
    } else {
        s.to_string()
    }
}

impl<'a> SimShell<'a> {
    pub fn new(scratch: &'a dyn Scratch) -> Self {
        Self { scratch }
    }

    pub async fn run(&self, command: &str) -> SimCommandOutcome {
        let mut out = SimCommandOutcome { exit_code: 0, output: String::new(), intents: Vec::new() };
        let mut skip = false;
        for (part, sep) in split_chain(command) {
            if !part.is_empty() && !skip {
                out.exit_code = self.run_one(&part, &mut out).await;
            }
            skip = matches!(sep, Sep::And) && out.exit_code != 0;
            if out.exit_code != 0 && matches!(sep, Sep::Seq) {
                // `exit N` ends the script.
                if part.starts_with("exit") {
                    break;
                }
            }
        }
        out
    }

    async fn run_one(&self, cmd: &str, out: &mut SimCommandOutcome) -> i32 {
        let (head, rest) = match cmd.split_once(char::is_whitespace) {
            Some((h, r)) => (h, r.trim()),
            None => (cmd, ""),
        };
        match head {
            "true" | ":" => 0,
            "false" => 1,
            "exit" => rest.parse().unwrap_or(if rest.is_empty() { 0 } else { 2 }),
            "sleep" => match rest.parse::<f64>() {
                Ok(s) if s >= 0.0 && s.is_finite() => {
                    tokio::time::sleep(Duration::from_secs_f64(s)).await;
                    0
                }
                _ => {
                    out.output.push_str(&format!("sleep: invalid time interval '{rest}'\n"));
                    1
                }
            },
            "echo" => {
                out.output.push_str(&unquote(rest));
                out.output.push('\n');
                0
            }
            "write-file" => {
                let (path, content) = match rest.split_once(char::is_whitespace) {
                    Some((p, c)) => (p, unquote(c)),
                    None => (rest, String::new()),
                };
                match self.scratch.write(&unquote(path), content.as_bytes()) {
                    Ok(()) => 0,
                    Err(e) => {
                        out.output.push_str(&format!("write-file: {e}\n"));
                        1
                    }
                }
            }
            "rm" => {
                let mut force = false;
                let mut targets = Vec::new();
                for arg in rest.split_whitespace() {
                    if arg.starts_with('-') {
                        force |= arg.contains('f');
                    } else {
                        targets.push(unquote(arg));
                    }
                }
                let mut code = 0;
                for t in targets {
                    if t == "*" {
                        let _ = self.scratch.clear();
                    } else if let Err(e) = self.scratch.remove(&t) {
                        if !force {
                            out.output.push_str(&format!("rm: {t}: {e}\n"));
                            code = 1;
                        }
                    }
                }
                code
            }
            _ => {
                out.intents.push(cmd.to_string());
                0
            }
        }
    }
}
