//! Discrete 8x8 grid world with six pressable pads on the border.
//!
//! A task is an ordered pair of distinct pad ids: press the first pad, then
//! the second, with no other pad in between. Pad colors are shuffled every
//! reset, so color is pure nuisance; task identity lives in the positions
//! visited. Pads that have been pressed render dimmed, which keeps task
//! progress visible in a single frame.

use super::{EnvError, Image};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const PAD_COUNT: usize = 6;
pub const ACTION_COUNT: u8 = 5;

/// Fixed palette table for pads: red, green, blue, yellow, magenta, cyan.
pub const PAD_COLORS: [[u8; 3]; 6] = [
    [255, 40, 40],
    [40, 255, 40],
    [60, 60, 255],
    [255, 255, 40],
    [255, 40, 255],
    [40, 255, 255],
];

const BACKGROUND: [u8; 3] = [12, 12, 12];
const AGENT_COLOR: [u8; 3] = [255, 255, 255];
const GRID: usize = 8;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct PinPadConfig {
    /// Grid side length. Only 8 is supported; the field exists so dataset
    /// headers record the geometry explicitly.
    pub grid: usize,
    pub cell_px: usize,
    pub horizon: usize,
    /// Brightness factor applied to a pad once it has been pressed.
    pub pressed_dim: f64,
}

impl Default for PinPadConfig {
    fn default() -> Self {
        Self { grid: GRID, cell_px: 2, horizon: 100, pressed_dim: 0.4 }
    }
}

/// Canonical ordering of the 30 ordered distinct pad pairs:
/// first major, second minor, equal pairs skipped.
pub fn pairs() -> Vec<(u8, u8)> {
    let mut out = Vec::with_capacity(30);
    for first in 0..PAD_COUNT as u8 {
        for second in 0..PAD_COUNT as u8 {
            if first != second {
                out.push((first, second));
            }
        }
    }
    out
}

/// Index of an ordered pair within `pairs()`.
pub fn pair_index(first: u8, second: u8) -> usize {
    debug_assert!(first != second);
    let offset = if second > first { second - 1 } else { second };
    first as usize * (PAD_COUNT - 1) + offset as usize
}

/// Pad occupying cell (row, col), if any. Pads are 2x2 regions in the four
/// border rows: rows {0,1} and {6,7}, column bands {0,1}, {3,4}, {6,7}.
fn pad_at(row: usize, col: usize) -> Option<u8> {
    let row_group = match row {
        0 | 1 => 0,
        6 | 7 => 1,
        _ => return None,
    };
    let col_group = match col {
        0 | 1 => 0,
        3 | 4 => 1,
        6 | 7 => 2,
        _ => return None,
    };
    Some(row_group * 3 + col_group)
}

pub struct PinPad {
    cfg: PinPadConfig,
    first: u8,
    second: u8,
    /// Palette index assigned to each pad this episode.
    colors: [usize; PAD_COUNT],
    agent: (usize, usize),
    history: Vec<u8>,
    steps: usize,
    succeeded: bool,
}

impl PinPad {
    pub fn reset(cfg: PinPadConfig, first: u8, second: u8, seed: u64) -> Result<Self, EnvError> {
        if first as usize >= PAD_COUNT || second as usize >= PAD_COUNT || first == second {
            return Err(EnvError::BadTask(format!(
                "task must be an ordered pair of distinct pad ids below {PAD_COUNT}, got ({first}, {second})"
            )));
        }
        assert_eq!(cfg.grid, GRID, "only the {GRID}x{GRID} pad layout is implemented");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut colors = [0usize; PAD_COUNT];
        for (i, c) in colors.iter_mut().enumerate() {
            *c = i;
        }
        colors.shuffle(&mut rng);
        let agent = loop {
            let cell = (rng.random_range(0..GRID), rng.random_range(0..GRID));
            if pad_at(cell.0, cell.1).is_none() {
                break cell;
            }
        };
        Ok(Self { cfg, first, second, colors, agent, history: Vec::new(), steps: 0, succeeded: false })
    }

    pub fn task(&self) -> (u8, u8) {
        (self.first, self.second)
    }

    pub fn agent_cell(&self) -> (usize, usize) {
        self.agent
    }

    pub fn press_history(&self) -> &[u8] {
        &self.history
    }

    pub fn done(&self) -> bool {
        self.succeeded || self.steps >= self.cfg.horizon
    }

    pub fn succeeded(&self) -> bool {
        self.succeeded
    }

    /// Collapsed press history: consecutive repeats of the same pad merge,
    /// so shuffling within a pad or re-entering it does not change the
    /// recorded order.
    fn distinct_presses(&self) -> Vec<u8> {
        let mut out: Vec<u8> = Vec::new();
        for &p in &self.history {
            if out.last() != Some(&p) {
                out.push(p);
            }
        }
        out
    }

    /// Apply one move (0 up, 1 down, 2 left, 3 right, 4 no-op). Moves into
    /// a wall leave the agent in place; a press is recorded only when the
    /// agent enters a pad from a non-pad cell or from a different pad.
    pub fn step(&mut self, action: u8) -> Result<(), EnvError> {
        if self.done() {
            return Err(EnvError::EpisodeDone);
        }
        if action >= ACTION_COUNT {
            return Err(EnvError::BadAction { action, actions: ACTION_COUNT });
        }
        let from_pad = pad_at(self.agent.0, self.agent.1);
        let (r, c) = self.agent;
        let next = match action {
            0 if r > 0 => (r - 1, c),
            1 if r + 1 < GRID => (r + 1, c),
            2 if c > 0 => (r, c - 1),
            3 if c + 1 < GRID => (r, c + 1),
            _ => (r, c),
        };
        let moved = next != self.agent;
        self.agent = next;
        if moved {
            if let Some(p) = pad_at(next.0, next.1) {
                if from_pad != Some(p) {
                    self.history.push(p);
                }
            }
        }
        self.steps += 1;
        if self.distinct_presses() == [self.first, self.second] {
            self.succeeded = true;
        }
        Ok(())
    }

    /// Breadth-first search toward the next goal pad, treating every other
    /// pad as an obstacle so the expert never records a stray press. The
    /// pad currently stood on stays traversable: re-entering the same pad
    /// records nothing, and corner cells of a pad have no non-pad neighbor.
    pub fn expert_action(&self) -> u8 {
        let presses = self.distinct_presses();
        let goal = match presses.as_slice() {
            [] => self.first,
            [a] if *a == self.first => self.second,
            _ => return 4,
        };
        let standing = pad_at(self.agent.0, self.agent.1);
        let passable = |r: usize, c: usize| match pad_at(r, c) {
            None => true,
            Some(p) => p == goal || Some(p) == standing,
        };
        // BFS with fixed neighbor order keeps the expert deterministic.
        let idx = |r: usize, c: usize| r * GRID + c;
        let mut parent_action = [u8::MAX; GRID * GRID];
        let mut queue = std::collections::VecDeque::new();
        parent_action[idx(self.agent.0, self.agent.1)] = 4;
        queue.push_back(self.agent);
        let mut found: Option<(usize, usize)> = None;
        'search: while let Some((r, c)) = queue.pop_front() {
            let neighbors = [
                (r.wrapping_sub(1), c, 0u8),
                (r + 1, c, 1),
                (r, c.wrapping_sub(1), 2),
                (r, c + 1, 3),
            ];
            for (nr, nc, a) in neighbors {
                if nr >= GRID || nc >= GRID || !passable(nr, nc) {
                    continue;
                }
                if parent_action[idx(nr, nc)] != u8::MAX {
                    continue;
                }
                parent_action[idx(nr, nc)] = a;
                if pad_at(nr, nc) == Some(goal) {
                    found = Some((nr, nc));
                    break 'search;
                }
                queue.push_back((nr, nc));
            }
        }
        let Some(mut cell) = found else {
            debug_assert!(false, "goal pad unreachable from {:?}", self.agent);
            return 4;
        };
        // Walk parents back to the cell adjacent to the start; its recorded
        // action is the first move of the shortest path.
        loop {
            let a = parent_action[idx(cell.0, cell.1)];
            let prev = match a {
                0 => (cell.0 + 1, cell.1),
                1 => (cell.0 - 1, cell.1),
                2 => (cell.0, cell.1 + 1),
                3 => (cell.0, cell.1 - 1),
                _ => unreachable!("walked back to the start cell"),
            };
            if prev == self.agent {
                return a;
            }
            cell = prev;
        }
    }

    pub fn observe(&self) -> Image {
        let px = self.cfg.cell_px;
        let n = GRID * px;
        let mut img = Image::filled(n, n, BACKGROUND);
        let pressed: Vec<bool> = (0..PAD_COUNT as u8)
            .map(|p| self.history.contains(&p))
            .collect();
        for r in 0..GRID {
            for c in 0..GRID {
                if let Some(p) = pad_at(r, c) {
                    let mut color = PAD_COLORS[self.colors[p as usize]];
                    if pressed[p as usize] {
                        for ch in &mut color {
                            *ch = (*ch as f64 * self.cfg.pressed_dim) as u8;
                        }
                    }
                    for dy in 0..px {
                        for dx in 0..px {
                            img.put(r * px + dy, c * px + dx, color);
                        }
                    }
                }
            }
        }
        // Agent: a diagonal pixel pair, visible on pads and background alike.
        let (ar, ac) = self.agent;
        img.put(ar * px, ac * px, AGENT_COLOR);
        img.put(ar * px + px - 1, ac * px + px - 1, AGENT_COLOR);
        img
    }
}
