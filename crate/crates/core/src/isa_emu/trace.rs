//! Execution traces.
//!
//! Text dump, one line per executed instruction:
//!
//! ```text
//! <icount>\t<opcode and operands>\tcsr=<csr at issue>
//! ```
//!
//! Markers inserted with `CoreState::mark` appear as `# <label> @<icount>`.

use super::Instr;
use std::fmt::Write;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceEntry {
    Exec { icount: u64, instr: Instr, csr: u32 },
    Marker { icount: u64, label: String },
}

#[derive(Debug, Clone, Default)]
pub struct TraceSink {
    entries: Vec<TraceEntry>,
    limit: Option<usize>,
    dropped: u64,
}

impl TraceSink {
    /// `limit` caps the number of stored instruction entries; later ones are counted but dropped.
    pub fn new(limit: Option<usize>) -> Self {
        Self { entries: Vec::new(), limit, dropped: 0 }
    }

    pub(super) fn push(&mut self, icount: u64, instr: Instr, csr: u32) {
        if self.limit.is_some_and(|l| self.entries.len() >= l) {
            self.dropped += 1;
        } else {
            self.entries.push(TraceEntry::Exec { icount, instr, csr });
        }
    }

    pub(super) fn push_marker(&mut self, icount: u64, label: &str) {
        if self.dropped == 0 {
            self.entries.push(TraceEntry::Marker { icount, label: label.to_string() });
        }
    }

    pub fn entries(&self) -> &[TraceEntry] {
        &self.entries
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    /// Instructions executed between the first marker `begin` and the next marker `end`.
    pub fn window(&self, begin: &str, end: &str) -> Option<Vec<Instr>> {
        let start = self.entries.iter().position(|e| matches!(e, TraceEntry::Marker { label, .. } if label == begin))?;
        let mut out = Vec::new();
        for e in &self.entries[start + 1..] {
            match e {
                TraceEntry::Marker { label, .. } if label == end => return Some(out),
                TraceEntry::Exec { instr, .. } => out.push(*instr),
                TraceEntry::Marker { .. } => {}
            }
        }
        None
    }

    pub fn dump(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            match e {
                TraceEntry::Exec { icount, instr, csr } => writeln!(s, "{icount}\t{instr}\tcsr={csr}"),
                TraceEntry::Marker { icount, label } => writeln!(s, "# {label} @{icount}"),
            }
            .unwrap();
        }
        if self.dropped > 0 {
            writeln!(s, "# {} further instructions not recorded", self.dropped).unwrap();
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use crate::isa_emu::{parse_program, CoreState};

    #[test]
    fn dump_and_window() {
        let mut c = CoreState::new(0, 64);
        c.enable_trace(None);
        c.mark("begin");
        c.run_trace(&parse_program("xdecimate.m8 x3, x0, x0\nlp.branch").unwrap()).unwrap();
        c.mark("end");
        let t = c.trace().unwrap();
        assert_eq!(t.dump(), "# begin @0\n0\txdecimate.m8 x3, x0, x0\tcsr=0\n1\tlp.branch\tcsr=1\n# end @2\n");
        assert_eq!(t.window("begin", "end").unwrap().len(), 2);
        assert!(t.window("end", "begin").is_none());
    }

    #[test]
    fn limit_drops_tail() {
        let mut c = CoreState::new(0, 0);
        c.enable_trace(Some(1));
        c.run_trace(&parse_program("lp.branch\nlp.branch\nlp.branch").unwrap()).unwrap();
        let t = c.take_trace().unwrap();
        assert_eq!(t.entries().len(), 1);
        assert_eq!(t.dropped(), 2);
        assert!(t.dump().ends_with("# 2 further instructions not recorded\n"));
    }
}
