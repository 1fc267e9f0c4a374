use std::io::{BufRead, Write};

use anyhow::Result;
use ita_core::arbitrator::{
    baseline_predict, ita_predict, ArbitratorMode, ArbitratorModel, Decision,
};
use ita_core::corpus::{Dialogue, Role, Vocabulary, REPLY};
use ita_core::imaginator::{BeamImaginator, ImaginatorModel, Imagine};

pub struct Demo<'a> {
    pub agent: &'a ImaginatorModel,
    pub user: &'a ImaginatorModel,
    pub arbitrator: &'a ArbitratorModel,
    pub vocab: &'a Vocabulary,
    pub beam_width: usize,
}

impl Demo<'_> {
    fn decide(&self, dialogue: &Dialogue) -> ita_core::Result<Decision> {
        let agent = BeamImaginator {
            model: self.agent,
            vocab: self.vocab,
            beam_width: self.beam_width,
        };
        let user = BeamImaginator {
            model: self.user,
            vocab: self.vocab,
            beam_width: self.beam_width,
        };
        match self.arbitrator.mode() {
            ArbitratorMode::Ita => ita_predict(
                self.arbitrator,
                self.vocab,
                &dialogue.utterances,
                &agent,
                &user,
            ),
            ArbitratorMode::Baseline => {
                let mut d = baseline_predict(self.arbitrator, self.vocab, &dialogue.utterances)?;
                if d.label == REPLY {
                    d.imagined_agent = agent.imagine(&dialogue.utterances)?.tokens;
                }
                Ok(d)
            }
        }
    }

    /// Reads user messages line by line until `/quit` or end of input.
    /// Returns the session transcript, one line per event.
    pub fn run(&self, input: impl BufRead, out: &mut impl Write) -> Result<Vec<String>> {
        let mut messages: Vec<(Role, String)> = Vec::new();
        let mut transcript = Vec::new();
        writeln!(
            out,
            "type user messages one per line; /reset starts over, /quit exits"
        )?;
        for line in input.lines() {
            let line = line?;
            let text = line.trim();
            match text {
                "" => continue,
                "/quit" => break,
                "/reset" => {
                    messages.clear();
                    transcript.push("-- reset".to_string());
                    writeln!(out, "history cleared")?;
                    continue;
                }
                _ => {}
            }
            messages.push((Role::User, text.to_string()));
            let dialogue = match Dialogue::from_messages(
                "demo",
                messages.iter().map(|(r, t)| (*r, t.as_str())),
            ) {
                Ok(d) => d,
                Err(e) => {
                    messages.pop();
                    writeln!(out, "warning: message ignored ({e})")?;
                    continue;
                }
            };
            transcript.push(format!("user: {text}"));
            let decision = match self.decide(&dialogue) {
                Ok(d) => d,
                Err(e) => {
                    writeln!(out, "warning: could not decide ({e})")?;
                    transcript.push(format!("warning: {e}"));
                    continue;
                }
            };
            if decision.label == REPLY {
                let verdict = format!("REPLY p={:.3}", decision.probs[1]);
                writeln!(out, "{verdict}")?;
                transcript.push(verdict);
                let reply = decision.imagined_agent.join(" ");
                let reply = reply.trim();
                if reply.is_empty() || reply == self.vocab.token(Vocabulary::EOS) {
                    writeln!(out, "warning: the agent imaginator produced no response")?;
                    transcript.push("warning: empty agent response".to_string());
                    continue;
                }
                writeln!(out, "agent: {reply}")?;
                transcript.push(format!("agent: {reply}"));
                messages.push((Role::Agent, reply.to_string()));
            } else {
                let verdict = format!("WAIT p={:.3}", decision.probs[0]);
                writeln!(out, "{verdict}")?;
                transcript.push(verdict);
            }
        }
        Ok(transcript)
    }
}
