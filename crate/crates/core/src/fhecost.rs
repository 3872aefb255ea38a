//! Leveled-CKKS cost planner for one encrypted batch of the polynomialized
//! MLP: operation counts, multiplicative depth and the smallest parameter
//! set from a fixed search grid. No encryption happens here.
//!
//! Model: the input is split into `⌈d/m⌉` chunks of at most `m` features,
//! each padded to a power of two and multiplied by a diagonal-packed weight
//! block with baby-step/giant-step rotations; the head adds one plaintext
//! multiplication per class and an output reduction tree.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CostError {
    #[error("invalid task shape: {0}")]
    ShapeError(String),
    #[error("activation degree must be at least 2, got {0}")]
    InvalidDegree(usize),
}

pub type Result<T> = std::result::Result<T, CostError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskShape {
    pub d: usize,
    pub m: usize,
    pub k: usize,
    pub ring_degree: usize,
}

impl TaskShape {
    pub fn new(d: usize, m: usize, k: usize, ring_degree: usize) -> Result<Self> {
        if d == 0 || m == 0 || k == 0 {
            return Err(CostError::ShapeError("d, m and K must be positive".into()));
        }
        if !ring_degree.is_power_of_two() || ring_degree < 2 {
            return Err(CostError::ShapeError(format!("ring degree {ring_degree} is not a power of two")));
        }
        let shape = Self { d, m, k, ring_degree };
        if m > shape.slots() {
            return Err(CostError::ShapeError(format!("hidden width {m} exceeds {} slots", shape.slots())));
        }
        Ok(shape)
    }

    pub fn slots(&self) -> usize {
        self.ring_degree / 2
    }

    /// Samples packed per ciphertext.
    pub fn batch(&self) -> usize {
        self.slots() / self.m
    }

    pub fn chunks(&self) -> usize {
        self.d.div_ceil(self.m)
    }

    /// Power-of-two width of each input chunk.
    pub fn padded_widths(&self) -> Vec<usize> {
        (0..self.chunks())
            .map(|c| (self.d - c * self.m).min(self.m).next_power_of_two())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivationDescriptor {
    pub name: String,
    pub degree: usize,
    pub depth_act: u32,
    pub act_ctct: usize,
    pub act_ctpt: usize,
    pub act_rescale: usize,
}

fn ceil_log2(x: usize) -> u32 {
    x.next_power_of_two().trailing_zeros()
}

impl ActivationDescriptor {
    /// The shared quadratic `αu² + βu + η`.
    pub fn quad() -> Self {
        Self::polynomial("quad", 2).expect("degree 2 is valid")
    }

    /// Bare `u²`: one squaring, nothing else.
    pub fn square() -> Self {
        Self {
            name: "square".into(),
            degree: 2,
            depth_act: ceil_log2(3),
            act_ctct: 1,
            act_ctpt: 0,
            act_rescale: 1,
        }
    }

    /// A general fixed-interval polynomial (least squares or minimax).
    ///
    /// Counts are calibrated on degrees 2 and 7 (2/2 and 5/4 ct-ct/ct-pt);
    /// degrees 3 and 5 give 3/2 and 4/3 by the same formulas. The
    /// activation's rescale count equals its degree.
    pub fn polynomial(name: &str, degree: usize) -> Result<Self> {
        if degree < 2 {
            return Err(CostError::InvalidDegree(degree));
        }
        let extra = degree - 2;
        Ok(Self {
            name: name.into(),
            degree,
            depth_act: ceil_log2(degree + 1),
            act_ctct: 2 + (3 * extra).div_ceil(5),
            act_ctpt: 2 + (degree.saturating_sub(3)).div_ceil(2),
            act_rescale: degree,
        })
    }

    /// Parses `quad`, `square`, `remez-<d>`, `ls-<d>` or `poly-<d>`.
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "quad" => Ok(Self::quad()),
            "square" => Ok(Self::square()),
            _ => {
                let (prefix, deg) = s
                    .rsplit_once('-')
                    .ok_or_else(|| CostError::ShapeError(format!("unknown activation scheme `{s}`")))?;
                if !matches!(prefix, "remez" | "ls" | "poly") {
                    return Err(CostError::ShapeError(format!("unknown activation scheme `{s}`")));
                }
                let degree: usize = deg
                    .parse()
                    .map_err(|_| CostError::ShapeError(format!("bad degree in `{s}`")))?;
                Self::polynomial(s, degree)
            }
        }
    }
}

/// Total multiplicative depth: two linear levels plus the activation.
pub fn depth_of(act: &ActivationDescriptor) -> u32 {
    2 + act.depth_act
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CkksConfig {
    pub ring_degree: usize,
    pub depth: u32,
    pub log_q: u32,
}

/// Candidate parameter sets, smallest first.
pub const SEARCH_GRID: [CkksConfig; 4] = [
    CkksConfig { ring_degree: 1 << 14, depth: 4, log_q: 280 },
    CkksConfig { ring_degree: 1 << 14, depth: 5, log_q: 320 },
    CkksConfig { ring_degree: 1 << 15, depth: 5, log_q: 320 },
    CkksConfig { ring_degree: 1 << 15, depth: 6, log_q: 360 },
];

pub fn min_feasible_config(depth_needed: u32) -> Option<CkksConfig> {
    SEARCH_GRID.iter().copied().find(|c| c.depth >= depth_needed)
}

/// Coefficient-modulus bit sizes for a depth budget: a 60-bit base prime,
/// one 40-bit prime per level and a 60-bit special prime.
pub fn modulus_chain(depth: u32) -> Option<Vec<u32>> {
    if !(4..=6).contains(&depth) {
        return None;
    }
    let mut chain = vec![60];
    chain.extend(std::iter::repeat(40).take(depth as usize));
    chain.push(60);
    Some(chain)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub shape: TaskShape,
    pub activation: ActivationDescriptor,
    pub slots: usize,
    pub batch: usize,
    pub encryptions: usize,
    pub ctct: usize,
    pub ctpt: usize,
    pub rotations: usize,
    pub rescales: usize,
    pub total_depth: u32,
    pub feasible_config: Option<CkksConfig>,
    pub modulus_chain: Option<Vec<u32>>,
}

/// BSGS rotations for one padded chunk: `(g − 1) + (b − 1)` with
/// `g = 2^⌈log2 √w⌉` and `b = w / g`.
fn bsgs_rotations(width: usize) -> usize {
    let g = 1usize << ceil_log2(((width as f64).sqrt()).ceil() as usize);
    let g = g.min(width);
    let b = width.div_ceil(g);
    (g - 1) + (b - 1)
}

pub fn op_counts(shape: &TaskShape, act: &ActivationDescriptor) -> Result<CostReport> {
    let shape = TaskShape::new(shape.d, shape.m, shape.k, shape.ring_degree)?;
    let widths = shape.padded_widths();
    let chunks = widths.len();
    let tree = ceil_log2(shape.m).saturating_sub(ceil_log2(shape.k)) as usize;
    let rotations = widths.iter().map(|&w| bsgs_rotations(w)).sum::<usize>() + tree;
    let total_depth = depth_of(act);
    let feasible_config = min_feasible_config(total_depth);
    Ok(CostReport {
        shape,
        activation: act.clone(),
        slots: shape.slots(),
        batch: shape.batch(),
        encryptions: chunks,
        ctct: act.act_ctct,
        ctpt: widths.iter().sum::<usize>() + shape.k + act.act_ctpt,
        rotations,
        rescales: 2 * chunks + 1 + act.act_rescale,
        total_depth,
        modulus_chain: feasible_config.and_then(|c| modulus_chain(c.depth)),
        feasible_config,
    })
}

/// Every grid configuration with whether its depth budget suffices.
pub fn feasibility_grid(act: &ActivationDescriptor) -> Vec<(CkksConfig, bool)> {
    let need = depth_of(act);
    SEARCH_GRID.iter().map(|&c| (c, c.depth >= need)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(d: usize, k: usize) -> TaskShape {
        TaskShape::new(d, 256, k, 1 << 14).unwrap()
    }

    #[test]
    fn descriptor_depths() {
        let d: Vec<u32> = [2, 3, 5, 7]
            .iter()
            .map(|&g| ActivationDescriptor::polynomial("p", g).unwrap().depth_act)
            .collect();
        assert_eq!(d, vec![2, 2, 3, 3]);
        assert_eq!(depth_of(&ActivationDescriptor::quad()), 4);
        assert_eq!(depth_of(&ActivationDescriptor::parse("remez-3").unwrap()), 4);
        assert_eq!(depth_of(&ActivationDescriptor::parse("remez-7").unwrap()), 5);
    }

    #[test]
    fn descriptor_counts() {
        let r3 = ActivationDescriptor::polynomial("r", 3).unwrap();
        let r5 = ActivationDescriptor::polynomial("r", 5).unwrap();
        let r7 = ActivationDescriptor::polynomial("r", 7).unwrap();
        let q = ActivationDescriptor::quad();
        assert_eq!((q.act_ctct, q.act_ctpt), (2, 2));
        assert_eq!((r3.act_ctct, r3.act_ctpt), (3, 2));
        assert_eq!((r5.act_ctct, r5.act_ctpt), (4, 3));
        assert_eq!((r7.act_ctct, r7.act_ctpt), (5, 4));
    }

    #[test]
    fn min_config_examples() {
        assert_eq!(min_feasible_config(4), Some(SEARCH_GRID[0]));
        assert_eq!(min_feasible_config(5), Some(SEARCH_GRID[1]));
        assert_eq!(min_feasible_config(7), None);
        assert_eq!(modulus_chain(4).unwrap(), vec![60, 40, 40, 40, 40, 60]);
        assert_eq!(modulus_chain(5).unwrap().len(), 7);
    }

    #[test]
    fn shape_checks() {
        assert!(TaskShape::new(10, 9000, 2, 1 << 14).is_err());
        let s = shape(93, 9);
        assert_eq!(s.batch(), 32);
        assert_eq!(s.padded_widths(), vec![128]);
        assert_eq!(shape(768, 100).padded_widths(), vec![256; 3]);
    }

    #[test]
    fn otto_quad_row() {
        let r = op_counts(&shape(93, 9), &ActivationDescriptor::quad()).unwrap();
        assert_eq!((r.encryptions, r.ctct, r.ctpt), (1, 2, 139));
    }
}
