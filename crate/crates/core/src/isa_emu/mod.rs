//! Functional, instruction-counting emulator.
//!
//! Every instruction costs one unit. A [`CoreState`] owns its registers, the
//! decimation counter `csr` and a private byte-addressed memory; cores never
//! share state, so several of them can run on different threads.

mod instr;
mod trace;

pub use instr::{parse_program, Addr, Decimate, Instr, Opcode, Reg, ShiftOp, ZERO};
pub use trace::{TraceEntry, TraceSink};

use thiserror::Error;

/// Largest block index the counter may address (`csr >> 1`).
pub const CSR_BLOCK_CAP: u32 = 1 << 15;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EmuError {
    #[error("illegal opcode `{0}`")]
    IllegalOpcode(String),
    #[error("register x{0} does not exist")]
    BadRegister(u8),
    #[error("bad operand: {0}")]
    BadOperand(String),
    #[error("{width}-byte access at {addr:#x} outside memory of {size} bytes (instruction {icount})")]
    OutOfBounds { addr: i64, width: usize, size: usize, icount: u64 },
    #[error("decimation counter {csr} exceeds the block cap (instruction {icount})")]
    CsrOverflow { csr: u32, icount: u64 },
}

#[derive(Debug, Clone)]
pub struct CoreState {
    regs: [u32; 32],
    csr: u32,
    mem: Vec<u8>,
    icount: u64,
    op_counts: [u64; Opcode::COUNT],
    core_id: usize,
    trace: Option<TraceSink>,
}

fn sext8(v: u32, lane: u32) -> i32 {
    i32::from((v >> (8 * lane)) as u8 as i8)
}

impl CoreState {
    pub fn new(core_id: usize, mem_size: usize) -> Self {
        Self {
            regs: [0; 32],
            csr: 0,
            mem: vec![0; mem_size],
            icount: 0,
            op_counts: [0; Opcode::COUNT],
            core_id,
            trace: None,
        }
    }

    /// A core whose memory starts out as `mem`.
    pub fn with_memory(core_id: usize, mem: Vec<u8>) -> Self {
        Self { mem, ..Self::new(core_id, 0) }
    }

    pub fn core_id(&self) -> usize {
        self.core_id
    }

    pub fn icount(&self) -> u64 {
        self.icount
    }

    pub fn op_count(&self, op: Opcode) -> u64 {
        self.op_counts[op.index()]
    }

    pub fn op_counts(&self) -> impl Iterator<Item = (Opcode, u64)> + '_ {
        Opcode::ALL.iter().map(|&op| (op, self.op_counts[op.index()]))
    }

    pub fn csr(&self) -> u32 {
        self.csr
    }

    /// Sets the counter directly; only meant for exercising arbitrary phases in tests.
    pub fn set_csr(&mut self, csr: u32) {
        self.csr = csr;
    }

    pub fn reg(&self, r: Reg) -> u32 {
        self.regs[usize::from(r)]
    }

    pub fn set_reg(&mut self, r: Reg, v: u32) {
        if r != ZERO {
            self.regs[usize::from(r)] = v;
        }
    }

    pub fn mem(&self) -> &[u8] {
        &self.mem
    }

    pub fn mem_mut(&mut self) -> &mut [u8] {
        &mut self.mem
    }

    pub fn load_bytes(&mut self, addr: usize, bytes: &[u8]) {
        self.mem[addr..addr + bytes.len()].copy_from_slice(bytes);
    }

    pub fn enable_trace(&mut self, limit: Option<usize>) {
        self.trace = Some(TraceSink::new(limit));
    }

    pub fn trace(&self) -> Option<&TraceSink> {
        self.trace.as_ref()
    }

    pub fn take_trace(&mut self) -> Option<TraceSink> {
        self.trace.take()
    }

    /// Inserts a label into the trace without executing anything.
    pub fn mark(&mut self, label: &str) {
        let icount = self.icount;
        if let Some(t) = &mut self.trace {
            t.push_marker(icount, label);
        }
    }

    fn check(&self, addr: i64, width: usize) -> Result<usize, EmuError> {
        if addr < 0 || addr as u64 + width as u64 > self.mem.len() as u64 {
            return Err(EmuError::OutOfBounds { addr, width, size: self.mem.len(), icount: self.icount });
        }
        Ok(addr as usize)
    }

    /// Resolves an address operand, applying the post-increment side effect.
    fn effective(&mut self, addr: Addr, width: usize) -> Result<usize, EmuError> {
        match addr {
            Addr::Offset { base, imm } => self.check(i64::from(self.reg(base)) + i64::from(imm), width),
            Addr::Indexed { base, index } => self.check(i64::from(self.reg(base)) + i64::from(self.reg(index)), width),
            Addr::PostInc { base, inc } => {
                let a = self.check(i64::from(self.reg(base)), width)?;
                self.set_reg(base, self.reg(base).wrapping_add(inc as u32));
                Ok(a)
            }
        }
    }

    /// Executes one instruction.
    pub fn step(&mut self, i: &Instr) -> Result<(), EmuError> {
        i.validate()?;
        let csr_at_issue = self.csr;
        match *i {
            Instr::Add { rd, rs1, rs2 } => self.set_reg(rd, self.reg(rs1).wrapping_add(self.reg(rs2))),
            Instr::AddI { rd, rs1, imm } => self.set_reg(rd, self.reg(rs1).wrapping_add(imm as u32)),
            Instr::Shift { op, rd, rs1, amount } => {
                let v = self.reg(rs1);
                let a = u32::from(amount);
                let r = match op {
                    ShiftOp::Sll => v << a,
                    ShiftOp::Srl => v >> a,
                    ShiftOp::Sra => ((v as i32) >> a) as u32,
                };
                self.set_reg(rd, r);
            }
            Instr::And { rd, rs1, rs2 } => self.set_reg(rd, self.reg(rs1) & self.reg(rs2)),
            Instr::AndI { rd, rs1, imm } => self.set_reg(rd, self.reg(rs1) & imm as u32),
            Instr::Or { rd, rs1, rs2 } => self.set_reg(rd, self.reg(rs1) | self.reg(rs2)),
            Instr::OrI { rd, rs1, imm } => self.set_reg(rd, self.reg(rs1) | imm as u32),
            Instr::Lbu { rd, addr } => {
                let a = self.effective(addr, 1)?;
                self.set_reg(rd, u32::from(self.mem[a]));
            }
            Instr::LbLane { rd, lane, addr } => {
                let a = self.effective(addr, 1)?;
                let shift = 8 * u32::from(lane);
                let v = (self.reg(rd) & !(0xff << shift)) | (u32::from(self.mem[a]) << shift);
                self.set_reg(rd, v);
            }
            Instr::Lw { rd, addr } => {
                let a = self.effective(addr, 4)?;
                self.set_reg(rd, u32::from_le_bytes(self.mem[a..a + 4].try_into().unwrap()));
            }
            Instr::Sw { rs, addr } => {
                let v = self.reg(rs);
                let a = self.effective(addr, 4)?;
                self.mem[a..a + 4].copy_from_slice(&v.to_le_bytes());
            }
            Instr::Sb { rs, addr } => {
                let v = self.reg(rs);
                let a = self.effective(addr, 1)?;
                self.mem[a] = v as u8;
            }
            Instr::Sdotp4 { rd, rs1, rs2 } => {
                let (a, b) = (self.reg(rs1), self.reg(rs2));
                let dot = (0..4).fold(0i32, |acc, l| acc.wrapping_add(sext8(a, l) * sext8(b, l)));
                self.set_reg(rd, self.reg(rd).wrapping_add(dot as u32));
            }
            Instr::Clip { rd, rs1, bits } => {
                let v = i64::from(self.reg(rs1) as i32);
                let hi = (1i64 << (bits - 1)) - 1;
                let lo = -(1i64 << (bits - 1));
                self.set_reg(rd, v.clamp(lo, hi) as i32 as u32);
            }
            Instr::XDecimate { flavor, rd, rs1, rs2 } => {
                let csr = self.csr;
                let block = csr >> 1;
                if block >= CSR_BLOCK_CAP {
                    return Err(EmuError::CsrOverflow { csr, icount: self.icount });
                }
                let s = csr & flavor.selector_mask();
                let w = flavor.field_bits();
                let o = (self.reg(rs2) >> (s * w)) & ((1 << w) - 1);
                let addr = i64::from(self.reg(rs1)) + i64::from(flavor.m() * block + o);
                let a = self.check(addr, 1)?;
                let lane = 8 * ((csr >> 1) & 3);
                let v = (self.reg(rd) & !(0xff << lane)) | (u32::from(self.mem[a]) << lane);
                self.set_reg(rd, v);
                self.csr = csr.wrapping_add(1);
            }
            Instr::XDecimateClear => self.csr = 0,
            Instr::LoopSetup { .. } | Instr::LoopBranch => {}
        }
        if let Some(t) = &mut self.trace {
            t.push(self.icount, *i, csr_at_issue);
        }
        self.icount += 1;
        self.op_counts[i.opcode().index()] += 1;
        Ok(())
    }

    /// Executes `instrs` in order and returns how many were executed.
    pub fn run_trace(&mut self, instrs: &[Instr]) -> Result<u64, EmuError> {
        let start = self.icount;
        for i in instrs {
            self.step(i)?;
        }
        Ok(self.icount - start)
    }

    pub fn sdotp4(&mut self, rd: Reg, rs1: Reg, rs2: Reg) -> Result<(), EmuError> {
        self.step(&Instr::Sdotp4 { rd, rs1, rs2 })
    }

    pub fn xdecimate_step(&mut self, rd: Reg, rs1: Reg, rs2: Reg, flavor: Decimate) -> Result<(), EmuError> {
        self.step(&Instr::XDecimate { flavor, rd, rs1, rs2 })
    }

    pub fn xdecimate_clear(&mut self) -> Result<(), EmuError> {
        self.step(&Instr::XDecimateClear)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse_format::extract_offset;
    use proptest::prelude::*;

    fn lanes(v: [i8; 4]) -> u32 {
        u32::from_le_bytes(v.map(|b| b as u8))
    }

    #[test]
    fn sdotp4_examples() {
        let mut c = CoreState::new(0, 0);
        c.set_reg(1, lanes([1, 1, 1, 1]));
        c.set_reg(2, lanes([2, 3, 4, 5]));
        c.sdotp4(3, 1, 2).unwrap();
        assert_eq!(c.reg(3), 14);
        c.set_reg(1, 0);
        c.sdotp4(3, 1, 2).unwrap();
        assert_eq!(c.reg(3), 14);
        c.set_reg(1, lanes([-128, -128, -128, -128]));
        c.set_reg(2, lanes([-128, 127, 1, -1]));
        c.set_reg(3, 0);
        c.sdotp4(3, 1, 2).unwrap();
        assert_eq!(c.reg(3) as i32, 16384 - 16256 - 128 + 128);
        assert_eq!(c.icount(), 3);
    }

    proptest! {
        #[test]
        fn sdotp4_matches_scalar_loop(a in any::<[i8; 4]>(), b in any::<[i8; 4]>(), acc in any::<i32>()) {
            let mut c = CoreState::new(0, 0);
            c.set_reg(5, lanes(a));
            c.set_reg(6, lanes(b));
            c.set_reg(7, acc as u32);
            c.sdotp4(7, 5, 6).unwrap();
            let mut want = acc;
            for l in 0..4 {
                want = want.wrapping_add(i32::from(a[l]) * i32::from(b[l]));
            }
            prop_assert_eq!(c.reg(7) as i32, want);
        }
    }

    fn mem_with_ramp() -> CoreState {
        let mut c = CoreState::new(0, 0x400);
        for (i, b) in c.mem_mut().iter_mut().enumerate() {
            *b = i as u8 ^ 0x5a;
        }
        c
    }

    #[test]
    fn xdecimate_first_two_steps_share_a_block() {
        let mut c = mem_with_ramp();
        c.set_reg(1, 0x100);
        c.set_reg(2, 0x25); // field0 = 5, field1 = 2
        c.set_reg(3, 0xaabb_ccdd);
        c.xdecimate_step(3, 1, 2, Decimate::M8).unwrap();
        assert_eq!(c.reg(3), 0xaabb_cc00 | u32::from(0x105u32 as u8 ^ 0x5a));
        assert_eq!(c.csr(), 1);
        c.xdecimate_step(3, 1, 2, Decimate::M8).unwrap();
        assert_eq!(c.reg(3), 0xaabb_cc00 | u32::from(0x102u32 as u8 ^ 0x5a));
        assert_eq!(c.csr(), 2);
        assert_eq!(c.op_count(Opcode::XDecimateM8), 2);
    }

    #[test]
    fn m4_uses_sixteen_two_bit_fields() {
        let mut c = mem_with_ramp();
        c.set_reg(1, 0);
        c.set_reg(2, 0b11 << 30); // field 15 = 3
        c.set_csr(15);
        c.xdecimate_step(4, 1, 2, Decimate::M4).unwrap();
        // block 7, lane 3
        assert_eq!(c.reg(4) >> 24, u32::from((4 * 7 + 3) as u8 ^ 0x5a));
        c.set_csr(16);
        c.xdecimate_step(4, 1, 2, Decimate::M4).unwrap();
        // selector wraps to field 0 while the block keeps advancing
        assert_eq!(c.reg(4) & 0xff, u32::from(32u8 ^ 0x5a));
    }

    #[test]
    fn clear_resets_counter() {
        let mut c = mem_with_ramp();
        c.set_csr(77);
        c.xdecimate_clear().unwrap();
        assert_eq!(c.csr(), 0);
        c.set_reg(2, 0x25);
        c.xdecimate_step(3, 1, 2, Decimate::M16).unwrap();
        let mut fresh = mem_with_ramp();
        fresh.set_reg(2, 0x25);
        fresh.xdecimate_step(3, 1, 2, Decimate::M16).unwrap();
        assert_eq!((c.reg(3), c.csr()), (fresh.reg(3), fresh.csr()));
    }

    #[test]
    fn csr_progression() {
        let mut c = CoreState::new(0, 0x100);
        c.set_reg(2, 0);
        let mut seen = vec![];
        for j in 0..8u32 {
            assert_eq!(c.csr(), j);
            seen.push((c.csr() >> 1, (c.csr() >> 1) & 3));
            c.xdecimate_step(3, 0, 2, Decimate::M8).unwrap();
        }
        let blocks: Vec<u32> = seen.iter().map(|s| s.0).collect();
        let lanes: Vec<u32> = seen.iter().map(|s| s.1).collect();
        assert_eq!(blocks, [0, 0, 1, 1, 2, 2, 3, 3]);
        assert_eq!(lanes, [0, 0, 1, 1, 2, 2, 3, 3]);
    }

    #[test]
    fn errors() {
        let mut c = CoreState::new(0, 16);
        c.set_reg(1, 14);
        let lw = Instr::Lw { rd: 2, addr: Addr::Offset { base: 1, imm: 0 } };
        assert!(matches!(c.step(&lw), Err(EmuError::OutOfBounds { addr: 14, width: 4, .. })));
        let neg = Instr::Lbu { rd: 2, addr: Addr::Offset { base: 0, imm: -1 } };
        assert!(matches!(c.step(&neg), Err(EmuError::OutOfBounds { .. })));
        c.set_csr(CSR_BLOCK_CAP << 1);
        assert!(matches!(c.xdecimate_step(2, 0, 0, Decimate::M8), Err(EmuError::CsrOverflow { .. })));
        assert!(matches!(c.step(&Instr::Add { rd: 40, rs1: 0, rs2: 0 }), Err(EmuError::BadRegister(40))));
        assert_eq!(c.icount(), 0);
    }

    #[test]
    fn run_trace_counts() {
        let mut c = CoreState::new(0, 64);
        assert_eq!(c.run_trace(&[]).unwrap(), 0);
        let p = parse_program("lw x1, 4(x3!)\nlw x2, 4(x3!)\nsdotp4 x4, x1, x2").unwrap();
        assert_eq!(c.run_trace(&p).unwrap(), 3);
        assert_eq!(c.reg(3), 8);
        c.set_reg(0, 99);
        assert_eq!(c.reg(0), 0);
    }

    #[test]
    fn post_increment_and_lanes() {
        let mut c = mem_with_ramp();
        c.set_reg(1, 0x10);
        c.step(&Instr::LbLane { rd: 2, lane: 2, addr: Addr::PostInc { base: 1, inc: 3 } }).unwrap();
        assert_eq!(c.reg(2), u32::from(0x10u8 ^ 0x5a) << 16);
        assert_eq!(c.reg(1), 0x13);
        c.set_reg(5, (-300i32) as u32);
        c.step(&Instr::Clip { rd: 6, rs1: 5, bits: 8 }).unwrap();
        assert_eq!(c.reg(6) as i32, -128);
        c.step(&Instr::Sb { rs: 6, addr: Addr::Indexed { base: 1, index: 0 } }).unwrap();
        assert_eq!(c.mem()[0x13], 0x80);
    }

    /// Software path: extract the offset, add `block * m`, load the byte and
    /// insert it into the lane. Each destination lane is written twice, as
    /// with the hardware path's two calls per block.
    fn sw_decimate(mem: &[u8], base: u32, packed: u32, flavor: Decimate, csr0: u32, steps: u32, init: [u32; 2]) -> [u32; 2] {
        let bytes = packed.to_le_bytes();
        let bits = flavor.field_bits();
        let mut regs = init;
        for j in 0..steps {
            let csr = csr0 + j;
            let field = (csr & flavor.selector_mask()) as usize;
            let o = u32::from(extract_offset(&bytes, field, bits).unwrap());
            let addr = base + flavor.m() * (csr >> 1) + o;
            let lane = (csr >> 1) & 3;
            let r = &mut regs[(j / 8) as usize % 2];
            *r = (*r & !(0xff << (8 * lane))) | (u32::from(mem[addr as usize]) << (8 * lane));
        }
        regs
    }

    fn arb_flavor() -> impl Strategy<Value = Decimate> {
        prop_oneof![Just(Decimate::M4), Just(Decimate::M8), Just(Decimate::M16)]
    }

    proptest! {
        #[test]
        fn decimation_matches_software_path(
            flavor in arb_flavor(),
            base in 0u32..256,
            packed in any::<u32>(),
            phase in 0u32..64,
            k in 1u32..=4,
            init in any::<[u32; 2]>(),
            seed in any::<u64>(),
        ) {
            let mut c = CoreState::new(0, 2048);
            let mut x = seed;
            for b in c.mem_mut() {
                x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                *b = (x >> 56) as u8;
            }
            c.set_reg(1, base);
            c.set_reg(2, packed);
            c.set_reg(10, init[0]);
            c.set_reg(11, init[1]);
            c.set_csr(phase);
            let steps = 4 * k;
            for j in 0..steps {
                let rd = if (j / 8) % 2 == 0 { 10 } else { 11 };
                c.xdecimate_step(rd, 1, 2, flavor).unwrap();
            }
            let want = sw_decimate(c.mem(), base, packed, flavor, phase, steps, init);
            prop_assert_eq!([c.reg(10), c.reg(11)], want);
            prop_assert_eq!(c.csr(), phase + steps);
        }
    }
}
