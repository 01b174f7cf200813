//! Trace emitter used by the kernel generators.
//!
//! Control flow is resolved while generating, so a kernel is a straight-line
//! instruction stream. Instructions are buffered and handed to
//! [`CoreState::run_trace`] in chunks; the first emulation error is kept and
//! reported by [`Asm::finish`].

use super::InnerWindow;
use crate::isa_emu::{Addr, CoreState, Decimate, EmuError, Instr, Reg, ShiftOp, ZERO};

pub const INNER_BEGIN: &str = "inner.begin";
pub const INNER_END: &str = "inner.end";

const CHUNK: usize = 4096;

pub(crate) struct Asm<'a> {
    core: &'a mut CoreState,
    buf: Vec<Instr>,
    err: Option<EmuError>,
    window: Option<InnerWindow>,
    window_start: Option<u64>,
}

pub(crate) fn post(base: Reg, inc: i32) -> Addr {
    Addr::PostInc { base, inc }
}

pub(crate) fn off(base: Reg, imm: i32) -> Addr {
    Addr::Offset { base, imm }
}

pub(crate) fn idx(base: Reg, index: Reg) -> Addr {
    Addr::Indexed { base, index }
}

pub(crate) fn imm(v: usize) -> i32 {
    i32::try_from(v).expect("address fits an immediate")
}

impl<'a> Asm<'a> {
    pub fn new(core: &'a mut CoreState) -> Self {
        Self { core, buf: Vec::with_capacity(CHUNK), err: None, window: None, window_start: None }
    }

    pub fn emit(&mut self, i: Instr) {
        self.buf.push(i);
        if self.buf.len() >= CHUNK {
            self.flush();
        }
    }

    fn flush(&mut self) {
        if self.err.is_none() {
            if let Err(e) = self.core.run_trace(&self.buf) {
                self.err = Some(e);
            }
        }
        self.buf.clear();
    }

    /// Whether iteration `it` of an `n`-iteration inner loop should be
    /// recorded as the steady-state window: the second one when there is
    /// more than one, and only the first such loop of the run.
    pub fn wants_window(&self, it: usize, n: usize) -> bool {
        self.window.is_none() && self.window_start.is_none() && it == 1.min(n - 1)
    }

    pub fn begin_window(&mut self) {
        self.flush();
        self.core.mark(INNER_BEGIN);
        self.window_start = Some(self.core.icount());
    }

    pub fn end_window(&mut self, macs: u64) {
        self.flush();
        self.core.mark(INNER_END);
        if let Some(start) = self.window_start {
            self.window = Some(InnerWindow { instructions: self.core.icount() - start, macs });
        }
    }

    pub fn finish(mut self) -> Result<Option<InnerWindow>, EmuError> {
        self.flush();
        match self.err {
            Some(e) => Err(e),
            None => Ok(self.window),
        }
    }

    // Mnemonics.

    pub fn li(&mut self, rd: Reg, v: usize) {
        self.emit(Instr::AddI { rd, rs1: ZERO, imm: imm(v) });
    }

    pub fn addi(&mut self, rd: Reg, rs1: Reg, imm: i32) {
        self.emit(Instr::AddI { rd, rs1, imm });
    }

    pub fn add(&mut self, rd: Reg, rs1: Reg, rs2: Reg) {
        self.emit(Instr::Add { rd, rs1, rs2 });
    }

    pub fn mv(&mut self, rd: Reg, rs: Reg) {
        self.add(rd, rs, ZERO);
    }

    pub fn andi(&mut self, rd: Reg, rs1: Reg, imm: i32) {
        self.emit(Instr::AndI { rd, rs1, imm });
    }

    pub fn srli(&mut self, rd: Reg, rs1: Reg, amount: u8) {
        self.emit(Instr::Shift { op: ShiftOp::Srl, rd, rs1, amount });
    }

    pub fn srai(&mut self, rd: Reg, rs1: Reg, amount: u8) {
        self.emit(Instr::Shift { op: ShiftOp::Sra, rd, rs1, amount });
    }

    pub fn lw(&mut self, rd: Reg, addr: Addr) {
        self.emit(Instr::Lw { rd, addr });
    }

    pub fn lbu(&mut self, rd: Reg, addr: Addr) {
        self.emit(Instr::Lbu { rd, addr });
    }

    pub fn lb_lane(&mut self, rd: Reg, lane: u8, addr: Addr) {
        self.emit(Instr::LbLane { rd, lane, addr });
    }

    pub fn sw(&mut self, rs: Reg, addr: Addr) {
        self.emit(Instr::Sw { rs, addr });
    }

    pub fn sb(&mut self, rs: Reg, addr: Addr) {
        self.emit(Instr::Sb { rs, addr });
    }

    pub fn sdotp4(&mut self, rd: Reg, rs1: Reg, rs2: Reg) {
        self.emit(Instr::Sdotp4 { rd, rs1, rs2 });
    }

    pub fn clip8(&mut self, rd: Reg, rs1: Reg) {
        self.emit(Instr::Clip { rd, rs1, bits: 8 });
    }

    pub fn xdecimate(&mut self, flavor: Decimate, rd: Reg, rs1: Reg, rs2: Reg) {
        self.emit(Instr::XDecimate { flavor, rd, rs1, rs2 });
    }

    pub fn xdecimate_clear(&mut self) {
        self.emit(Instr::XDecimateClear);
    }

    pub fn loop_setup(&mut self, count: usize) {
        self.emit(Instr::LoopSetup { count: count as u32 });
    }

    /// One conditional-branch slot (loop back-edge or border test).
    pub fn branch(&mut self) {
        self.emit(Instr::LoopBranch);
    }
}
