use std::collections::VecDeque;
use std::fmt::Write as _;

use diffcore::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::seeds::SeedRange;
use super::{Environment, StepOutcome};
use crate::error::{Error, Result};

pub const GRID_SIZE: usize = 13;
pub const NUM_COLORS: u8 = 8;
pub const GRID_CHANNELS: usize = 5;
pub const NUM_GRID_ACTIONS: usize = 4;
pub const GOAL_REWARD: f64 = 10.0;
pub const HAZARD_REWARD: f64 = -1.0;
pub const DEFAULT_MAX_STEPS: usize = 256;
const MAX_HAZARDS: usize = 3;
const WALK_STEPS: usize = 90;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Cell {
    Wall,
    Floor,
    Goal,
    Hazard,
    Start,
}

impl Cell {
    fn glyph(self) -> char {
        match self {
            Cell::Wall => '#',
            Cell::Floor => '.',
            Cell::Goal => 'G',
            Cell::Hazard => 'H',
            Cell::Start => 'S',
        }
    }

    fn from_glyph(c: char) -> Option<Cell> {
        Some(match c {
            '#' => Cell::Wall,
            '.' => Cell::Floor,
            'G' => Cell::Goal,
            'H' => Cell::Hazard,
            'S' => Cell::Start,
            _ => return None,
        })
    }

    fn passable(self) -> bool {
        self != Cell::Wall
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridLevel {
    pub seed: u64,
    pub color: u8,
    pub cells: Vec<Cell>,
    pub max_steps: usize,
}

impl GridLevel {
    pub fn cell(&self, r: usize, c: usize) -> Cell {
        self.cells[r * GRID_SIZE + c]
    }

    fn find(&self, target: Cell) -> Option<(usize, usize)> {
        self.cells
            .iter()
            .position(|&c| c == target)
            .map(|i| (i / GRID_SIZE, i % GRID_SIZE))
    }

    pub fn start(&self) -> (usize, usize) {
        self.find(Cell::Start).expect("level has a start")
    }

    pub fn goal(&self) -> (usize, usize) {
        self.find(Cell::Goal).expect("level has a goal")
    }

    pub fn hazards(&self) -> usize {
        self.cells.iter().filter(|&&c| c == Cell::Hazard).count()
    }

    /// Plain-text dump: a `seed=<u64> colors=<id>` header and one line per row.
    pub fn dump(&self) -> String {
        let mut out = format!("seed={} colors={}\n", self.seed, self.color);
        for r in 0..GRID_SIZE {
            for c in 0..GRID_SIZE {
                out.push(self.cell(r, c).glyph());
            }
            out.push('\n');
        }
        out
    }

    /// Inverse of [`GridLevel::dump`]. Accepts any layout with one start, one
    /// goal and at most three hazards; solvability is not checked here.
    pub fn parse(text: &str) -> Result<GridLevel> {
        let err = |line: usize, reason: String| Error::LevelParse { line, reason };
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| err(1, "missing header".into()))?;
        let mut seed = None;
        let mut color = None;
        for field in header.split_whitespace() {
            match field.split_once('=') {
                Some(("seed", v)) => {
                    seed = Some(v.parse::<u64>().map_err(|e| err(1, format!("seed: {e}")))?)
                }
                Some(("colors", v)) => {
                    let id = v
                        .parse::<u8>()
                        .map_err(|e| err(1, format!("colors: {e}")))?;
                    if id >= NUM_COLORS {
                        return Err(err(1, format!("color id {id} out of range")));
                    }
                    color = Some(id);
                }
                _ => return Err(err(1, format!("unexpected header field {field:?}"))),
            }
        }
        let (seed, color) = match (seed, color) {
            (Some(s), Some(c)) => (s, c),
            _ => return Err(err(1, "header needs seed= and colors=".into())),
        };
        let mut cells = Vec::with_capacity(GRID_SIZE * GRID_SIZE);
        for r in 0..GRID_SIZE {
            let line_no = r + 2;
            let row = lines
                .next()
                .ok_or_else(|| err(line_no, "missing row".into()))?;
            let row: Vec<char> = row.chars().collect();
            if row.len() != GRID_SIZE {
                return Err(err(
                    line_no,
                    format!("expected {GRID_SIZE} cells, got {}", row.len()),
                ));
            }
            for ch in row {
                cells.push(
                    Cell::from_glyph(ch)
                        .ok_or_else(|| err(line_no, format!("unknown cell {ch:?}")))?,
                );
            }
        }
        if let Some(extra) = lines.find(|l| !l.trim().is_empty()) {
            return Err(err(GRID_SIZE + 2, format!("trailing content {extra:?}")));
        }
        let count = |t: Cell| cells.iter().filter(|&&c| c == t).count();
        if count(Cell::Start) != 1 || count(Cell::Goal) != 1 {
            return Err(err(0, "need exactly one S and one G".into()));
        }
        if count(Cell::Hazard) > MAX_HAZARDS {
            return Err(err(0, format!("more than {MAX_HAZARDS} hazards")));
        }
        Ok(GridLevel {
            seed,
            color,
            cells,
            max_steps: DEFAULT_MAX_STEPS,
        })
    }
}

const MOVES: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

fn offset(pos: (usize, usize), action: usize) -> Option<(usize, usize)> {
    let (dr, dc) = MOVES[action];
    let r = pos.0.checked_add_signed(dr)?;
    let c = pos.1.checked_add_signed(dc)?;
    (r < GRID_SIZE && c < GRID_SIZE).then_some((r, c))
}

/// Shortest start-to-goal path length avoiding walls and hazards, if any.
pub fn bfs_distance(level: &GridLevel) -> Option<usize> {
    let dist = bfs_from(level, level.start());
    dist[level.goal().0 * GRID_SIZE + level.goal().1]
}

fn bfs_from(level: &GridLevel, from: (usize, usize)) -> Vec<Option<usize>> {
    let mut dist = vec![None; GRID_SIZE * GRID_SIZE];
    dist[from.0 * GRID_SIZE + from.1] = Some(0);
    let mut queue = VecDeque::from([from]);
    while let Some(pos) = queue.pop_front() {
        let d = dist[pos.0 * GRID_SIZE + pos.1].unwrap();
        if level.cell(pos.0, pos.1) == Cell::Goal {
            continue;
        }
        for a in 0..4 {
            if let Some(next) = offset(pos, a) {
                let cell = level.cell(next.0, next.1);
                let idx = next.0 * GRID_SIZE + next.1;
                if cell.passable() && cell != Cell::Hazard && dist[idx].is_none() {
                    dist[idx] = Some(d + 1);
                    queue.push_back(next);
                }
            }
        }
    }
    dist
}

fn carve(rng: &mut ChaCha8Rng, seed: u64) -> GridLevel {
    let mut cells = vec![Cell::Wall; GRID_SIZE * GRID_SIZE];
    let inner = 1..GRID_SIZE - 1;
    let start = (rng.gen_range(inner.clone()), rng.gen_range(inner.clone()));
    let mut pos = start;
    let mut carved = vec![start];
    cells[start.0 * GRID_SIZE + start.1] = Cell::Floor;
    for _ in 0..WALK_STEPS {
        let (dr, dc) = MOVES[rng.gen_range(0..4)];
        let r = pos.0 as isize + dr;
        let c = pos.1 as isize + dc;
        if r < 1 || c < 1 || r >= GRID_SIZE as isize - 1 || c >= GRID_SIZE as isize - 1 {
            continue;
        }
        pos = (r as usize, c as usize);
        let idx = pos.0 * GRID_SIZE + pos.1;
        if cells[idx] == Cell::Wall {
            cells[idx] = Cell::Floor;
            carved.push(pos);
        }
    }
    let color = rng.gen_range(0..NUM_COLORS);
    let mut level = GridLevel {
        seed,
        color,
        cells,
        max_steps: DEFAULT_MAX_STEPS,
    };
    level.cells[start.0 * GRID_SIZE + start.1] = Cell::Start;
    // Goal: a random carved cell at least half the farthest distance away.
    let dist = bfs_from(&level, start);
    let far = carved
        .iter()
        .filter_map(|p| dist[p.0 * GRID_SIZE + p.1])
        .max()
        .unwrap_or(0);
    let candidates: Vec<_> = carved
        .iter()
        .copied()
        .filter(|p| *p != start && dist[p.0 * GRID_SIZE + p.1].is_some_and(|d| 2 * d >= far))
        .collect();
    if let Some(&goal) = candidates.get(rng.gen_range(0..candidates.len().max(1))) {
        level.cells[goal.0 * GRID_SIZE + goal.1] = Cell::Goal;
    }
    let hazards = rng.gen_range(0..=MAX_HAZARDS);
    for _ in 0..hazards {
        let p = carved[rng.gen_range(0..carved.len())];
        let idx = p.0 * GRID_SIZE + p.1;
        if level.cells[idx] == Cell::Floor {
            level.cells[idx] = Cell::Hazard;
        }
    }
    level
}

/// Deterministic level for `seed`. Layouts without a hazard-free start-to-goal
/// path are discarded and regenerated from the next sub-seed.
pub fn generate_level(seed: u64) -> GridLevel {
    for attempt in 0u64.. {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(attempt);
        let level = carve(&mut rng, seed);
        if level.find(Cell::Goal).is_some() && bfs_distance(&level).is_some() {
            return level;
        }
    }
    unreachable!("attempt counter is unbounded")
}

enum LevelSource {
    Sampled(SeedRange),
    Fixed(GridLevel),
}

/// Gridworld episode runner: samples a fresh level from its seed range on
/// every reset, or replays one fixed level.
pub struct GridEnv {
    source: LevelSource,
    rng: ChaCha8Rng,
    level: GridLevel,
    agent: (usize, usize),
    t: usize,
    done: bool,
}

impl GridEnv {
    pub fn sampled(seeds: SeedRange, stream_seed: u64) -> Self {
        let mut env = Self {
            source: LevelSource::Sampled(seeds),
            rng: ChaCha8Rng::seed_from_u64(stream_seed),
            level: generate_level(0),
            agent: (0, 0),
            t: 0,
            done: true,
        };
        env.reset();
        env
    }

    pub fn fixed(level: GridLevel) -> Self {
        let mut env = Self {
            source: LevelSource::Fixed(level.clone()),
            rng: ChaCha8Rng::seed_from_u64(0),
            level,
            agent: (0, 0),
            t: 0,
            done: true,
        };
        env.reset();
        env
    }

    pub fn level(&self) -> &GridLevel {
        &self.level
    }

    pub fn agent(&self) -> (usize, usize) {
        self.agent
    }

    fn observe(&self) -> Tensor {
        let n = GRID_SIZE * GRID_SIZE;
        let mut data = vec![0.0; GRID_CHANNELS * n];
        let shade = (self.level.color as f64 + 1.0) / NUM_COLORS as f64;
        for (i, &cell) in self.level.cells.iter().enumerate() {
            match cell {
                Cell::Wall => data[i] = 1.0,
                Cell::Goal => data[n + i] = 1.0,
                Cell::Hazard => data[2 * n + i] = 1.0,
                Cell::Floor | Cell::Start => {}
            }
            if cell != Cell::Wall {
                data[4 * n + i] = shade;
            }
        }
        data[3 * n + self.agent.0 * GRID_SIZE + self.agent.1] = 1.0;
        Tensor::new(vec![GRID_CHANNELS, GRID_SIZE, GRID_SIZE], data)
            .expect("grid observation shape")
    }
}

impl Environment for GridEnv {
    fn observation_shape(&self) -> [usize; 3] {
        [GRID_CHANNELS, GRID_SIZE, GRID_SIZE]
    }

    fn num_actions(&self) -> usize {
        NUM_GRID_ACTIONS
    }

    fn reset(&mut self) -> Tensor {
        if let LevelSource::Sampled(seeds) = &self.source {
            let seed = seeds.sample(&mut self.rng);
            self.level = generate_level(seed);
        } else if let LevelSource::Fixed(level) = &self.source {
            self.level = level.clone();
        }
        self.agent = self.level.start();
        self.t = 0;
        self.done = false;
        self.observe()
    }

    fn step(&mut self, action: usize) -> Result<StepOutcome> {
        if action >= NUM_GRID_ACTIONS {
            return Err(Error::ActionOutOfRange {
                action,
                num_actions: NUM_GRID_ACTIONS,
            });
        }
        if self.done {
            return Err(Error::EpisodeDone);
        }
        self.t += 1;
        let mut reward = 0.0;
        if let Some(next) = offset(self.agent, action) {
            match self.level.cell(next.0, next.1) {
                Cell::Wall => {}
                Cell::Goal => {
                    self.agent = next;
                    reward = GOAL_REWARD;
                    self.done = true;
                }
                Cell::Hazard => {
                    self.agent = next;
                    reward = HAZARD_REWARD;
                    self.done = true;
                }
                Cell::Floor | Cell::Start => self.agent = next,
            }
        }
        if self.t >= self.level.max_steps {
            self.done = true;
        }
        Ok(StepOutcome {
            observation: self.observe(),
            reward,
            done: self.done,
        })
    }
}

/// Debug rendering with the agent drawn as `A`.
impl std::fmt::Display for GridEnv {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut s = String::new();
        for r in 0..GRID_SIZE {
            for c in 0..GRID_SIZE {
                let ch = if (r, c) == self.agent {
                    'A'
                } else {
                    self.level.cell(r, c).glyph()
                };
                s.push(ch);
            }
            let _ = writeln!(s);
        }
        f.write_str(&s)
    }
}
