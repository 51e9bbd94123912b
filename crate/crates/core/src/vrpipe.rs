//! Computer, oculus and controller.
//!
//! A [`RegisterMatrix`] holds the values the software computes from its state.
//! A [`PixelFrame`] is the screen, bound cell by cell to the registers: after
//! every publish, pixel `(r, c)` equals register `(r, c)`. Addressing is
//! 1-indexed, with flat index `i = (r - 1) * C + c`. A [`ControllerState`]
//! turns the observer's hand into an impulse on an aimed body.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{ExternalForce, PhysicalSystem, State};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VrError {
    #[error("index ({r}, {c}) outside {rows}x{cols}")]
    OutOfRange {
        r: usize,
        c: usize,
        rows: usize,
        cols: usize,
    },
    #[error("flat index {i} outside 1..={max}")]
    FlatOutOfRange { i: usize, max: usize },
    #[error("value {value} does not fit in {bits} bits")]
    Overflow { value: u32, bits: u8 },
    #[error("pixel value {value} exceeds maxval {maxval}")]
    PgmOverflow { value: u32, maxval: u32 },
    #[error("frame {rows}x{cols} does not fit registers {n}x{m}")]
    FrameTooLarge {
        rows: usize,
        cols: usize,
        n: usize,
        m: usize,
    },
    #[error("invalid viewport: {0}")]
    Viewport(String),
    #[error("invalid controller: {0}")]
    Controller(String),
    #[error("no body is aimed")]
    NoTarget,
    #[error("malformed PGM: {0}")]
    Pgm(String),
}

pub type Result<T> = std::result::Result<T, VrError>;

/// Flat index of a 1-indexed cell.
pub fn flat_index(r: usize, c: usize, cols: usize) -> Result<usize> {
    if r < 1 || c < 1 || c > cols {
        return Err(VrError::OutOfRange {
            r,
            c,
            rows: usize::MAX,
            cols,
        });
    }
    Ok((r - 1) * cols + c)
}

/// Inverse of [`flat_index`] on an `rows x cols` grid.
pub fn unflat_index(i: usize, rows: usize, cols: usize) -> Result<(usize, usize)> {
    let max = rows * cols;
    if i < 1 || i > max {
        return Err(VrError::FlatOutOfRange { i, max });
    }
    Ok(((i - 1) / cols + 1, (i - 1) % cols + 1))
}

/// Fixed-width register cells arranged in `rows x cols`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegisterMatrix {
    rows: usize,
    cols: usize,
    bits: u8,
    cells: Vec<u32>,
}

impl RegisterMatrix {
    pub fn new(rows: usize, cols: usize, bits: u8) -> Self {
        assert!(rows > 0 && cols > 0, "register matrix needs cells");
        assert!((1..=32).contains(&bits), "register width must be 1..=32 bits");
        RegisterMatrix {
            rows,
            cols,
            bits,
            cells: vec![0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    fn max_value(&self) -> u32 {
        if self.bits == 32 {
            u32::MAX
        } else {
            (1u32 << self.bits) - 1
        }
    }

    fn offset(&self, r: usize, c: usize) -> Result<usize> {
        if r < 1 || r > self.rows || c < 1 || c > self.cols {
            return Err(VrError::OutOfRange {
                r,
                c,
                rows: self.rows,
                cols: self.cols,
            });
        }
        Ok(flat_index(r, c, self.cols)? - 1)
    }

    pub fn get(&self, r: usize, c: usize) -> Result<u32> {
        Ok(self.cells[self.offset(r, c)?])
    }

    pub fn set(&mut self, r: usize, c: usize, value: u32) -> Result<()> {
        if value > self.max_value() {
            return Err(VrError::Overflow {
                value,
                bits: self.bits,
            });
        }
        let k = self.offset(r, c)?;
        self.cells[k] = value;
        Ok(())
    }

    /// Bit `b` (0 = least significant) of a cell.
    pub fn bit(&self, r: usize, c: usize, b: u8) -> Result<bool> {
        Ok(b < self.bits && (self.get(r, c)? >> b) & 1 == 1)
    }
}

/// Immutable snapshot of the screen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelFrame {
    rows: usize,
    cols: usize,
    values: Vec<u32>,
    /// Frame time as raw f64 bits, so frames stay `Eq`.
    t_bits: u64,
}

impl PixelFrame {
    pub fn new(rows: usize, cols: usize, values: Vec<u32>, t: f64) -> Self {
        assert_eq!(values.len(), rows * cols, "frame size mismatch");
        PixelFrame {
            rows,
            cols,
            values,
            t_bits: t.to_bits(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn t(&self) -> f64 {
        f64::from_bits(self.t_bits)
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    /// Pixel at 1-indexed `(r, c)`.
    pub fn get(&self, r: usize, c: usize) -> Result<u32> {
        if r < 1 || r > self.rows || c < 1 || c > self.cols {
            return Err(VrError::OutOfRange {
                r,
                c,
                rows: self.rows,
                cols: self.cols,
            });
        }
        Ok(self.values[flat_index(r, c, self.cols)? - 1])
    }

    /// True if every pixel equals its bound register cell.
    pub fn matches(&self, registers: &RegisterMatrix) -> bool {
        (1..=self.rows).all(|r| {
            (1..=self.cols).all(|c| self.get(r, c).ok() == registers.get(r, c).ok())
        })
    }

    /// FNV-1a over the pixel values.
    pub fn checksum(&self) -> u64 {
        checksum(self.values.iter().copied())
    }
}

/// FNV-1a over the `rows x cols` window of a register matrix.
pub fn register_checksum(registers: &RegisterMatrix, rows: usize, cols: usize) -> Result<u64> {
    let mut vals = Vec::with_capacity(rows * cols);
    for r in 1..=rows {
        for c in 1..=cols {
            vals.push(registers.get(r, c)?);
        }
    }
    Ok(checksum(vals.into_iter()))
}

fn checksum(values: impl Iterator<Item = u32>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for byte in v.to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

/// World rectangle mapped onto the pixel lattice; row 1 is the top edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Viewport {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub rows: usize,
    pub cols: usize,
}

impl Viewport {
    pub fn new(window: [f64; 4], rows: usize, cols: usize) -> Result<Self> {
        let [x_min, x_max, y_min, y_max] = window;
        if !(x_min < x_max && y_min < y_max) || !window.iter().all(|v| v.is_finite()) {
            return Err(VrError::Viewport(format!("degenerate window {window:?}")));
        }
        if rows == 0 || cols == 0 {
            return Err(VrError::Viewport("frame needs at least one pixel".into()));
        }
        Ok(Viewport {
            x_min,
            x_max,
            y_min,
            y_max,
            rows,
            cols,
        })
    }

    /// Pixel containing a world point; each pixel is the half-open cell
    /// `[k, k + 1)` in lattice units.
    pub fn pixel(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let u = (x - self.x_min) / (self.x_max - self.x_min) * self.cols as f64;
        let v = (self.y_max - y) / (self.y_max - self.y_min) * self.rows as f64;
        if !(u >= 0.0 && u < self.cols as f64 && v >= 0.0 && v < self.rows as f64) {
            return None;
        }
        Some((v.floor() as usize + 1, u.floor() as usize + 1))
    }
}

/// Intensity of body `k` in listing order.
pub fn body_intensity(k: usize) -> u32 {
    const LEVELS: [u32; 3] = [255, 170, 85];
    LEVELS[k % LEVELS.len()]
}

/// Recompute the registers from the system state, then publish the frame.
///
/// Only the `rows x cols` window of the registers is written. Bodies outside
/// the world window are clipped. Where marks overlap, the brighter one wins.
pub fn render(
    system: &PhysicalSystem,
    state: &State,
    viewport: &Viewport,
    registers: &mut RegisterMatrix,
) -> Result<PixelFrame> {
    if viewport.rows > registers.rows() || viewport.cols > registers.cols() {
        return Err(VrError::FrameTooLarge {
            rows: viewport.rows,
            cols: viewport.cols,
            n: registers.rows(),
            m: registers.cols(),
        });
    }
    let mut marks = vec![0u32; viewport.rows * viewport.cols];
    for (k, body) in system.bodies().iter().enumerate() {
        let Ok(pos) = system.body_position(&body.name, &state.q) else {
            continue;
        };
        if let Some((r, c)) = viewport.pixel(pos[0], pos[1]) {
            let cell = &mut marks[flat_index(r, c, viewport.cols)? - 1];
            *cell = (*cell).max(body_intensity(k));
        }
    }
    for r in 1..=viewport.rows {
        for c in 1..=viewport.cols {
            registers.set(r, c, marks[flat_index(r, c, viewport.cols)? - 1])?;
        }
    }
    publish(registers, viewport.rows, viewport.cols, state.t)
}

/// Copy the bound register window into a new frame.
pub fn publish(registers: &RegisterMatrix, rows: usize, cols: usize, t: f64) -> Result<PixelFrame> {
    let mut values = Vec::with_capacity(rows * cols);
    for r in 1..=rows {
        for c in 1..=cols {
            values.push(registers.get(r, c)?);
        }
    }
    Ok(PixelFrame::new(rows, cols, values, t))
}

/// Hand-held controller: position, orientation (roll, pitch, yaw), buttons, trigger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub position: [f64; 3],
    pub orientation: [f64; 3],
    pub buttons: Vec<bool>,
    pub trigger: f64,
}

fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

impl ControllerState {
    pub fn new(position: [f64; 3], orientation: [f64; 3], buttons: Vec<bool>, trigger: f64) -> Result<Self> {
        if !position.iter().chain(&orientation).all(|v| v.is_finite()) {
            return Err(VrError::Controller("pose must be finite".into()));
        }
        if !(0.0..=1.0).contains(&trigger) {
            return Err(VrError::Controller(format!("trigger {trigger} outside [0, 1]")));
        }
        Ok(ControllerState {
            position,
            orientation: orientation.map(wrap_angle),
            buttons,
            trigger,
        })
    }

    /// Degrees of freedom: six pose coordinates plus internal ones.
    pub fn dof(&self) -> usize {
        6 + self.buttons.len() + 1
    }

    /// Controller +x axis in the world frame (yaw about z, then pitch, then roll).
    pub fn forward(&self) -> [f64; 3] {
        let [_, pitch, yaw] = self.orientation;
        [yaw.cos() * pitch.cos(), yaw.sin() * pitch.cos(), -pitch.sin()]
    }
}

/// Which body the controller points at.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AimMapping {
    pub target: Option<String>,
}

/// Impulse of magnitude `trigger * f_max` along the controller's forward axis.
pub fn controller_to_force(ctrl: &ControllerState, f_max: f64, aim: &AimMapping, t: f64) -> Result<ExternalForce> {
    let target = aim.target.as_deref().ok_or(VrError::NoTarget)?;
    let mag = ctrl.trigger * f_max;
    let dir = ctrl.forward();
    Ok(ExternalForce::impulse(target, dir.map(|d| d * mag), t))
}

/// Binary PGM (P5), maxval 255.
pub fn encode_pgm(frame: &PixelFrame) -> Result<Vec<u8>> {
    let mut out = format!("P5 {} {} 255\n", frame.cols(), frame.rows()).into_bytes();
    out.reserve(frame.values().len());
    for &v in frame.values() {
        if v > 255 {
            return Err(VrError::PgmOverflow { value: v, maxval: 255 });
        }
        out.push(v as u8);
    }
    Ok(out)
}

/// Decode a binary PGM with 8-bit samples.
pub fn decode_pgm(bytes: &[u8]) -> Result<PixelFrame> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(VrError::Pgm("truncated header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // exactly one whitespace byte separates header and raster
    pos += 1;
    if fields[0] != "P5" {
        return Err(VrError::Pgm(format!("magic `{}`", fields[0])));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| VrError::Pgm(format!("bad number `{s}`")));
    let (cols, rows, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(VrError::Pgm(format!("unsupported maxval {maxval}")));
    }
    let raster = bytes.get(pos..).unwrap_or_default();
    if raster.len() != rows * cols {
        return Err(VrError::Pgm(format!(
            "expected {} raster bytes, got {}",
            rows * cols,
            raster.len()
        )));
    }
    Ok(PixelFrame::new(rows, cols, raster.iter().map(|&b| b as u32).collect(), 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{simulate, Integrator};
    use crate::scenario::{paper_sem, paper_sem_init};
    use proptest::prelude::*;

    #[test]
    fn flat_index_examples() {
        assert_eq!(flat_index(1, 1, 64).unwrap(), 1);
        assert_eq!(flat_index(2, 1, 64).unwrap(), 65);
        assert!(flat_index(0, 1, 64).is_err());
        assert!(flat_index(1, 65, 64).is_err());
        assert!(unflat_index(0, 64, 64).is_err());
        assert!(unflat_index(4097, 64, 64).is_err());
    }

    #[test]
    fn flat_index_is_a_bijection_on_64x64() {
        let mut seen = vec![false; 64 * 64 + 1];
        for r in 1..=64 {
            for c in 1..=64 {
                let i = flat_index(r, c, 64).unwrap();
                assert!(!seen[i]);
                seen[i] = true;
                assert_eq!(unflat_index(i, 64, 64).unwrap(), (r, c));
            }
        }
        assert!(seen[1..].iter().all(|&s| s));
    }

    #[test]
    fn registers_respect_bit_width() {
        let mut regs = RegisterMatrix::new(2, 2, 4);
        regs.set(1, 2, 15).unwrap();
        assert_eq!(regs.set(1, 2, 16).unwrap_err(), VrError::Overflow { value: 16, bits: 4 });
        assert!(regs.bit(1, 2, 3).unwrap());
        assert!(!regs.bit(1, 1, 0).unwrap());
        assert!(regs.get(3, 1).is_err());
    }

    fn viewport() -> Viewport {
        Viewport::new([-1.5, 1.5, -1.5, 1.5], 64, 64).unwrap()
    }

    #[test]
    fn empty_window_renders_black() {
        let sys = paper_sem();
        let far = Viewport::new([10.0, 11.0, 10.0, 11.0], 8, 8).unwrap();
        let mut regs = RegisterMatrix::new(8, 8, 8);
        let frame = render(&sys, &paper_sem_init(), &far, &mut regs).unwrap();
        assert!(frame.values().iter().all(|&v| v == 0));
    }

    #[test]
    fn centered_body_lands_on_the_center_pixel() {
        let sys = crate::dynamics::PhysicalSystem::new(
            vec![crate::dynamics::BodySpec::free("Earth", 1.0)],
            1.0,
        )
        .unwrap();
        let st = State::new(0.0, vec![0.0; 3], vec![0.0; 3]);
        let vp = Viewport::new([-1.0, 1.0, -1.0, 1.0], 64, 64).unwrap();
        let mut regs = RegisterMatrix::new(64, 64, 8);
        let frame = render(&sys, &st, &vp, &mut regs).unwrap();
        let lit: Vec<(usize, usize)> = (1..=64)
            .flat_map(|r| (1..=64).map(move |c| (r, c)))
            .filter(|&(r, c)| frame.get(r, c).unwrap() != 0)
            .collect();
        assert_eq!(lit, vec![(33, 33)]);
        assert!(frame.matches(&regs));
    }

    #[test]
    fn pixel_cells_are_half_open() {
        let vp = Viewport::new([0.0, 4.0, 0.0, 4.0], 4, 4).unwrap();
        assert_eq!(vp.pixel(0.0, 4.0), Some((1, 1)));
        assert_eq!(vp.pixel(1.0, 3.0), Some((2, 2)));
        assert_eq!(vp.pixel(4.0, 2.0), None);
        assert_eq!(vp.pixel(2.0, 0.0), None);
    }

    #[test]
    fn render_leaves_outside_registers_alone() {
        let sys = paper_sem();
        let mut regs = RegisterMatrix::new(70, 80, 8);
        regs.set(65, 1, 7).unwrap();
        regs.set(1, 70, 9).unwrap();
        let frame = render(&sys, &paper_sem_init(), &viewport(), &mut regs).unwrap();
        assert!(frame.matches(&regs));
        assert_eq!(regs.get(65, 1).unwrap(), 7);
        assert_eq!(regs.get(1, 70).unwrap(), 9);
        assert_eq!(frame.checksum(), register_checksum(&regs, 64, 64).unwrap());
    }

    #[test]
    fn frame_larger_than_registers_is_rejected() {
        let mut regs = RegisterMatrix::new(32, 32, 8);
        assert!(matches!(
            render(&paper_sem(), &paper_sem_init(), &viewport(), &mut regs),
            Err(VrError::FrameTooLarge { .. })
        ));
    }

    #[test]
    fn consecutive_frames_differ_only_where_bodies_moved() {
        let sys = paper_sem();
        let traj = simulate(&sys, &paper_sem_init(), 0.2, 0.1, Integrator::Rk4).unwrap();
        let mut regs = RegisterMatrix::new(64, 64, 8);
        let vp = viewport();
        let a = render(&sys, &traj.samples[0].state(), &vp, &mut regs).unwrap();
        let b = render(&sys, &traj.samples[2].state(), &vp, &mut regs).unwrap();
        let touched = |s: &State| -> Vec<(usize, usize)> {
            sys.bodies()
                .iter()
                .filter_map(|bd| {
                    let p = sys.body_position(&bd.name, &s.q).unwrap();
                    vp.pixel(p[0], p[1])
                })
                .collect()
        };
        let mut expected = touched(&traj.samples[0].state());
        expected.extend(touched(&traj.samples[2].state()));
        for r in 1..=64 {
            for c in 1..=64 {
                if a.get(r, c).unwrap() != b.get(r, c).unwrap() {
                    assert!(expected.contains(&(r, c)), "({r}, {c}) changed");
                }
            }
        }
        assert_ne!(a, b);
    }

    #[test]
    fn controller_mapping() {
        let aim = AimMapping {
            target: Some("Moon".into()),
        };
        let idle = ControllerState::new([0.0; 3], [0.0; 3], vec![], 0.0).unwrap();
        assert_eq!(controller_to_force(&idle, 2.0, &aim, 1.0).unwrap().vector(), [0.0; 3]);
        let full = ControllerState::new([0.0; 3], [0.0; 3], vec![false; 2], 1.0).unwrap();
        assert_eq!(full.dof(), 9);
        let f = controller_to_force(&full, 2.0, &aim, 1.0).unwrap();
        assert_eq!(f, ExternalForce::impulse("Moon", [2.0, 0.0, 0.0], 1.0));
        let back = ControllerState::new([0.0; 3], [0.0, 0.0, PI], vec![], 1.0).unwrap();
        let g = controller_to_force(&back, 2.0, &aim, 1.0).unwrap().vector();
        for ax in 0..3 {
            assert!((g[ax] + f.vector()[ax]).abs() < 1e-12);
        }
        assert_eq!(
            controller_to_force(&full, 2.0, &AimMapping::default(), 0.0).unwrap_err(),
            VrError::NoTarget
        );
        assert!(ControllerState::new([0.0; 3], [0.0; 3], vec![], 1.5).is_err());
        let wrapped = ControllerState::new([0.0; 3], [3.0 * PI, 0.0, -3.0 * PI], vec![], 0.5).unwrap();
        assert!(wrapped.orientation.iter().all(|a| *a > -PI && *a <= PI));
    }

    #[test]
    fn pgm_golden_bytes() {
        let one = PixelFrame::new(1, 1, vec![0], 0.0);
        let bytes = encode_pgm(&one).unwrap();
        assert_eq!(bytes, b"P5 1 1 255\n\0".to_vec());
        let white = PixelFrame::new(2, 2, vec![255; 4], 0.0);
        let bytes = encode_pgm(&white).unwrap();
        assert_eq!(&bytes[..11], b"P5 2 2 255\n");
        assert_eq!(&bytes[11..], &[0xFF; 4]);
        let hot = PixelFrame::new(1, 1, vec![256], 0.0);
        assert_eq!(
            encode_pgm(&hot).unwrap_err(),
            VrError::PgmOverflow { value: 256, maxval: 255 }
        );
    }

    #[test]
    fn decode_accepts_comments_and_rejects_truncation() {
        let f = decode_pgm(b"P5\n# made by hand\n2 1\n255\n\x01\x02").unwrap();
        assert_eq!((f.rows(), f.cols(), f.values()), (1, 2, &[1u32, 2][..]));
        assert!(decode_pgm(b"P5 2 2 255\n\x00").is_err());
        assert!(decode_pgm(b"P2 1 1 255\n0").is_err());
    }

    proptest! {
        #[test]
        fn pgm_round_trip(rows in 1usize..12, cols in 1usize..12, seed in any::<u64>()) {
            let mut x = seed | 1;
            let values: Vec<u32> = (0..rows * cols)
                .map(|_| {
                    x ^= x << 13;
                    x ^= x >> 7;
                    x ^= x << 17;
                    (x % 256) as u32
                })
                .collect();
            let frame = PixelFrame::new(rows, cols, values, 0.0);
            let back = decode_pgm(&encode_pgm(&frame).unwrap()).unwrap();
            prop_assert_eq!(back.values(), frame.values());
            prop_assert_eq!((back.rows(), back.cols()), (rows, cols));
        }
    }
}
