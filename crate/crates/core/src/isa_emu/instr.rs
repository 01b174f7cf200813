//! The closed instruction set the kernels are written in.
//!
//! It is a small subset of RV32I plus the XpulpV2 features the kernels
//! rely on (post-increment and register-indexed loads, a 4x8-bit signed dot
//! product, clipping, hardware loops) and the decimating load extension.
//! There is no binary encoding; instructions are Rust values with a textual
//! form used by trace dumps and [`parse_program`].

use super::EmuError;
use std::fmt;
use std::str::FromStr;

/// Register index, `x0`..`x31`. `x0` reads as zero and ignores writes.
pub type Reg = u8;

pub const ZERO: Reg = 0;

/// Memory operand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Addr {
    /// `imm(base)`
    Offset { base: Reg, imm: i32 },
    /// `inc(base!)`: access `base`, then `base += inc`.
    PostInc { base: Reg, inc: i32 },
    /// `index(base)`: access `base + index`.
    Indexed { base: Reg, index: Reg },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftOp {
    Sll,
    Srl,
    Sra,
}

/// Which block size a decimating load decodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Decimate {
    M4,
    M8,
    M16,
}

impl Decimate {
    pub fn from_m(m: usize) -> Option<Self> {
        match m {
            4 => Some(Decimate::M4),
            8 => Some(Decimate::M8),
            16 => Some(Decimate::M16),
            _ => None,
        }
    }

    pub fn m(self) -> u32 {
        match self {
            Decimate::M4 => 4,
            Decimate::M8 => 8,
            Decimate::M16 => 16,
        }
    }

    /// Width of one packed offset field in `rs2`.
    pub fn field_bits(self) -> u32 {
        if self == Decimate::M4 {
            2
        } else {
            4
        }
    }

    /// Mask applied to the counter to select the field: 16 fields of 2 bits or 8 of 4.
    pub fn selector_mask(self) -> u32 {
        if self == Decimate::M4 {
            0xf
        } else {
            0x7
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Instr {
    Add { rd: Reg, rs1: Reg, rs2: Reg },
    AddI { rd: Reg, rs1: Reg, imm: i32 },
    Shift { op: ShiftOp, rd: Reg, rs1: Reg, amount: u8 },
    And { rd: Reg, rs1: Reg, rs2: Reg },
    AndI { rd: Reg, rs1: Reg, imm: i32 },
    Or { rd: Reg, rs1: Reg, rs2: Reg },
    OrI { rd: Reg, rs1: Reg, imm: i32 },
    /// Zero-extending byte load.
    Lbu { rd: Reg, addr: Addr },
    /// Byte load into one 8-bit lane of `rd`; the other lanes are kept.
    LbLane { rd: Reg, lane: u8, addr: Addr },
    Lw { rd: Reg, addr: Addr },
    Sw { rs: Reg, addr: Addr },
    Sb { rs: Reg, addr: Addr },
    /// `rd += sum(lane(rs1) * lane(rs2))` over four signed bytes.
    Sdotp4 { rd: Reg, rs1: Reg, rs2: Reg },
    /// Saturate to a signed `bits`-bit range.
    Clip { rd: Reg, rs1: Reg, bits: u8 },
    XDecimate { flavor: Decimate, rd: Reg, rs1: Reg, rs2: Reg },
    XDecimateClear,
    /// Hardware-loop setup. Control flow is resolved by the trace generator,
    /// so loop instructions only account for their issue slot.
    LoopSetup { count: u32 },
    /// One conditional-branch slot: a software loop back-edge or a bounds test.
    LoopBranch,
}

/// Opcode classes, used for per-opcode histograms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Opcode {
    Add,
    Shift,
    And,
    Or,
    Lbu,
    LbLane,
    Lw,
    Sw,
    Sb,
    Sdotp4,
    Clip,
    XDecimateM4,
    XDecimateM8,
    XDecimateM16,
    XDecimateClear,
    LoopSetup,
    LoopBranch,
}

impl Opcode {
    pub const COUNT: usize = 17;
    pub const ALL: [Opcode; Self::COUNT] = [
        Opcode::Add,
        Opcode::Shift,
        Opcode::And,
        Opcode::Or,
        Opcode::Lbu,
        Opcode::LbLane,
        Opcode::Lw,
        Opcode::Sw,
        Opcode::Sb,
        Opcode::Sdotp4,
        Opcode::Clip,
        Opcode::XDecimateM4,
        Opcode::XDecimateM8,
        Opcode::XDecimateM16,
        Opcode::XDecimateClear,
        Opcode::LoopSetup,
        Opcode::LoopBranch,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl Instr {
    pub fn opcode(&self) -> Opcode {
        match self {
            Instr::Add { .. } | Instr::AddI { .. } => Opcode::Add,
            Instr::Shift { .. } => Opcode::Shift,
            Instr::And { .. } | Instr::AndI { .. } => Opcode::And,
            Instr::Or { .. } | Instr::OrI { .. } => Opcode::Or,
            Instr::Lbu { .. } => Opcode::Lbu,
            Instr::LbLane { .. } => Opcode::LbLane,
            Instr::Lw { .. } => Opcode::Lw,
            Instr::Sw { .. } => Opcode::Sw,
            Instr::Sb { .. } => Opcode::Sb,
            Instr::Sdotp4 { .. } => Opcode::Sdotp4,
            Instr::Clip { .. } => Opcode::Clip,
            Instr::XDecimate { flavor: Decimate::M4, .. } => Opcode::XDecimateM4,
            Instr::XDecimate { flavor: Decimate::M8, .. } => Opcode::XDecimateM8,
            Instr::XDecimate { flavor: Decimate::M16, .. } => Opcode::XDecimateM16,
            Instr::XDecimateClear => Opcode::XDecimateClear,
            Instr::LoopSetup { .. } => Opcode::LoopSetup,
            Instr::LoopBranch => Opcode::LoopBranch,
        }
    }

    fn regs(&self) -> [Reg; 3] {
        let a = |addr: &Addr| match *addr {
            Addr::Offset { base, .. } | Addr::PostInc { base, .. } => (base, ZERO),
            Addr::Indexed { base, index } => (base, index),
        };
        match self {
            Instr::Add { rd, rs1, rs2 }
            | Instr::And { rd, rs1, rs2 }
            | Instr::Or { rd, rs1, rs2 }
            | Instr::Sdotp4 { rd, rs1, rs2 }
            | Instr::XDecimate { rd, rs1, rs2, .. } => [*rd, *rs1, *rs2],
            Instr::AddI { rd, rs1, .. }
            | Instr::AndI { rd, rs1, .. }
            | Instr::OrI { rd, rs1, .. }
            | Instr::Shift { rd, rs1, .. }
            | Instr::Clip { rd, rs1, .. } => [*rd, *rs1, ZERO],
            Instr::Lbu { rd, addr } | Instr::LbLane { rd, addr, .. } | Instr::Lw { rd, addr } => {
                let (b, i) = a(addr);
                [*rd, b, i]
            }
            Instr::Sw { rs, addr } | Instr::Sb { rs, addr } => {
                let (b, i) = a(addr);
                [*rs, b, i]
            }
            Instr::XDecimateClear | Instr::LoopSetup { .. } | Instr::LoopBranch => [ZERO; 3],
        }
    }

    /// Checks register indices and immediate ranges.
    pub fn validate(&self) -> Result<(), EmuError> {
        if let Some(&r) = self.regs().iter().find(|&&r| r >= 32) {
            return Err(EmuError::BadRegister(r));
        }
        match *self {
            Instr::Shift { amount, .. } if amount >= 32 => Err(EmuError::BadOperand(format!("shift amount {amount}"))),
            Instr::LbLane { lane, .. } if lane >= 4 => Err(EmuError::BadOperand(format!("lane {lane}"))),
            Instr::Clip { bits, .. } if !(1..=32).contains(&bits) => Err(EmuError::BadOperand(format!("clip width {bits}"))),
            _ => Ok(()),
        }
    }
}

// ---------------------------------------------------------------------------
// Text form
// ---------------------------------------------------------------------------

impl fmt::Display for Addr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Addr::Offset { base, imm } => write!(f, "{imm}(x{base})"),
            Addr::PostInc { base, inc } => write!(f, "{inc}(x{base}!)"),
            Addr::Indexed { base, index } => write!(f, "x{index}(x{base})"),
        }
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Opcode::Add => "add",
            Opcode::Shift => "shift",
            Opcode::And => "and",
            Opcode::Or => "or",
            Opcode::Lbu => "lbu",
            Opcode::LbLane => "lb.lane",
            Opcode::Lw => "lw",
            Opcode::Sw => "sw",
            Opcode::Sb => "sb",
            Opcode::Sdotp4 => "sdotp4",
            Opcode::Clip => "clip",
            Opcode::XDecimateM4 => "xdecimate.m4",
            Opcode::XDecimateM8 => "xdecimate.m8",
            Opcode::XDecimateM16 => "xdecimate.m16",
            Opcode::XDecimateClear => "xdecimate.clear",
            Opcode::LoopSetup => "lp.setup",
            Opcode::LoopBranch => "lp.branch",
        };
        f.write_str(s)
    }
}

impl fmt::Display for Instr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Instr::Add { rd, rs1, rs2 } => write!(f, "add x{rd}, x{rs1}, x{rs2}"),
            Instr::AddI { rd, rs1, imm } => write!(f, "addi x{rd}, x{rs1}, {imm}"),
            Instr::Shift { op, rd, rs1, amount } => {
                let m = match op {
                    ShiftOp::Sll => "slli",
                    ShiftOp::Srl => "srli",
                    ShiftOp::Sra => "srai",
                };
                write!(f, "{m} x{rd}, x{rs1}, {amount}")
            }
            Instr::And { rd, rs1, rs2 } => write!(f, "and x{rd}, x{rs1}, x{rs2}"),
            Instr::AndI { rd, rs1, imm } => write!(f, "andi x{rd}, x{rs1}, {imm}"),
            Instr::Or { rd, rs1, rs2 } => write!(f, "or x{rd}, x{rs1}, x{rs2}"),
            Instr::OrI { rd, rs1, imm } => write!(f, "ori x{rd}, x{rs1}, {imm}"),
            Instr::Lbu { rd, addr } => write!(f, "lbu x{rd}, {addr}"),
            Instr::LbLane { rd, lane, addr } => write!(f, "lb.lane x{rd}[{lane}], {addr}"),
            Instr::Lw { rd, addr } => write!(f, "lw x{rd}, {addr}"),
            Instr::Sw { rs, addr } => write!(f, "sw x{rs}, {addr}"),
            Instr::Sb { rs, addr } => write!(f, "sb x{rs}, {addr}"),
            Instr::Sdotp4 { rd, rs1, rs2 } => write!(f, "sdotp4 x{rd}, x{rs1}, x{rs2}"),
            Instr::Clip { rd, rs1, bits } => write!(f, "clip x{rd}, x{rs1}, {bits}"),
            Instr::XDecimate { rd, rs1, rs2, .. } => write!(f, "{} x{rd}, x{rs1}, x{rs2}", self.opcode()),
            Instr::XDecimateClear => write!(f, "xdecimate.clear"),
            Instr::LoopSetup { count } => write!(f, "lp.setup {count}"),
            Instr::LoopBranch => write!(f, "lp.branch"),
        }
    }
}

fn parse_reg(s: &str) -> Result<Reg, EmuError> {
    let s = s.trim();
    s.strip_prefix('x')
        .and_then(|n| n.parse::<u8>().ok())
        .filter(|&r| r < 32)
        .ok_or_else(|| EmuError::BadOperand(format!("register `{s}`")))
}

fn parse_imm(s: &str) -> Result<i32, EmuError> {
    s.trim().parse().map_err(|_| EmuError::BadOperand(format!("immediate `{}`", s.trim())))
}

fn parse_addr(s: &str) -> Result<Addr, EmuError> {
    let bad = || EmuError::BadOperand(format!("address `{}`", s.trim()));
    let (off, rest) = s.trim().split_once('(').ok_or_else(bad)?;
    let inner = rest.strip_suffix(')').ok_or_else(bad)?;
    if let Some(base) = inner.strip_suffix('!') {
        return Ok(Addr::PostInc { base: parse_reg(base)?, inc: parse_imm(off)? });
    }
    let base = parse_reg(inner)?;
    if off.trim().starts_with('x') {
        Ok(Addr::Indexed { base, index: parse_reg(off)? })
    } else {
        Ok(Addr::Offset { base, imm: parse_imm(off)? })
    }
}

impl FromStr for Instr {
    type Err = EmuError;

    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let line = line.trim();
        let (mnemonic, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        // Split operands on commas that are not inside an address.
        let ops: Vec<&str> = if rest.trim().is_empty() { vec![] } else { rest.split(',').map(str::trim).collect() };
        let want = |n: usize| {
            if ops.len() == n {
                Ok(())
            } else {
                Err(EmuError::BadOperand(format!("`{mnemonic}` takes {n} operands, got {}", ops.len())))
            }
        };
        let rrr = |ctor: fn(Reg, Reg, Reg) -> Instr| -> Result<Instr, EmuError> {
            want(3)?;
            Ok(ctor(parse_reg(ops[0])?, parse_reg(ops[1])?, parse_reg(ops[2])?))
        };
        let rri = |ctor: fn(Reg, Reg, i32) -> Instr| -> Result<Instr, EmuError> {
            want(3)?;
            Ok(ctor(parse_reg(ops[0])?, parse_reg(ops[1])?, parse_imm(ops[2])?))
        };
        let shift = |op: ShiftOp| -> Result<Instr, EmuError> {
            want(3)?;
            let amount = ops[2].parse().map_err(|_| EmuError::BadOperand(format!("shift amount `{}`", ops[2])))?;
            Ok(Instr::Shift { op, rd: parse_reg(ops[0])?, rs1: parse_reg(ops[1])?, amount })
        };
        let instr = match mnemonic {
            "add" => rrr(|rd, rs1, rs2| Instr::Add { rd, rs1, rs2 })?,
            "and" => rrr(|rd, rs1, rs2| Instr::And { rd, rs1, rs2 })?,
            "or" => rrr(|rd, rs1, rs2| Instr::Or { rd, rs1, rs2 })?,
            "sdotp4" => rrr(|rd, rs1, rs2| Instr::Sdotp4 { rd, rs1, rs2 })?,
            "xdecimate.m4" => rrr(|rd, rs1, rs2| Instr::XDecimate { flavor: Decimate::M4, rd, rs1, rs2 })?,
            "xdecimate.m8" => rrr(|rd, rs1, rs2| Instr::XDecimate { flavor: Decimate::M8, rd, rs1, rs2 })?,
            "xdecimate.m16" => rrr(|rd, rs1, rs2| Instr::XDecimate { flavor: Decimate::M16, rd, rs1, rs2 })?,
            "addi" => rri(|rd, rs1, imm| Instr::AddI { rd, rs1, imm })?,
            "andi" => rri(|rd, rs1, imm| Instr::AndI { rd, rs1, imm })?,
            "ori" => rri(|rd, rs1, imm| Instr::OrI { rd, rs1, imm })?,
            "slli" => shift(ShiftOp::Sll)?,
            "srli" => shift(ShiftOp::Srl)?,
            "srai" => shift(ShiftOp::Sra)?,
            "clip" => {
                want(3)?;
                let bits = ops[2].parse().map_err(|_| EmuError::BadOperand(format!("clip width `{}`", ops[2])))?;
                Instr::Clip { rd: parse_reg(ops[0])?, rs1: parse_reg(ops[1])?, bits }
            }
            "lbu" | "lw" | "sw" | "sb" => {
                want(2)?;
                let r = parse_reg(ops[0])?;
                let addr = parse_addr(ops[1])?;
                match mnemonic {
                    "lbu" => Instr::Lbu { rd: r, addr },
                    "lw" => Instr::Lw { rd: r, addr },
                    "sw" => Instr::Sw { rs: r, addr },
                    _ => Instr::Sb { rs: r, addr },
                }
            }
            "lb.lane" => {
                want(2)?;
                let bad = || EmuError::BadOperand(format!("lane operand `{}`", ops[0]));
                let (reg, lane) = ops[0].split_once('[').ok_or_else(bad)?;
                let lane = lane.strip_suffix(']').and_then(|l| l.parse().ok()).ok_or_else(bad)?;
                Instr::LbLane { rd: parse_reg(reg)?, lane, addr: parse_addr(ops[1])? }
            }
            "xdecimate.clear" => {
                want(0)?;
                Instr::XDecimateClear
            }
            "lp.setup" => {
                want(1)?;
                let count = ops[0].parse().map_err(|_| EmuError::BadOperand(format!("loop count `{}`", ops[0])))?;
                Instr::LoopSetup { count }
            }
            "lp.branch" => {
                want(0)?;
                Instr::LoopBranch
            }
            other => return Err(EmuError::IllegalOpcode(other.to_string())),
        };
        instr.validate()?;
        Ok(instr)
    }
}

/// Parses one instruction per line. Blank lines and `#` comments are skipped.
pub fn parse_program(text: &str) -> Result<Vec<Instr>, EmuError> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::parse)
        .collect()
}
