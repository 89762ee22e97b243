//! Synthetic floor plans and trajectory logs for tests, fixtures and demos.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::gridmap::{CellState, GridMap};
use crate::trajectory::{Pose2, PoseSample, RelPose, RunLog};

fn px(m: f64, res: f64) -> usize {
    (m / res).round().max(1.0) as usize
}

fn fill_rect(map: &mut GridMap, r0: usize, c0: usize, r1: usize, c1: usize, state: CellState) {
    for r in r0..r1.min(map.height()) {
        for c in c0..c1.min(map.width()) {
            map.set(r, c, state);
        }
    }
}

/// `w x h` map whose outermost ring is occupied.
pub fn bordered_room(w: usize, h: usize, res: f64) -> GridMap {
    let mut m = GridMap::filled(w, h, res, CellState::Occupied).expect("non-empty map");
    fill_rect(&mut m, 1, 1, h - 1, w - 1, CellState::Free);
    m
}

/// Straight corridor with the given free length and width (m), walled by
/// one-pixel walls.
pub fn corridor(length_m: f64, width_m: f64, res: f64) -> GridMap {
    bordered_room(px(length_m, res) + 2, px(width_m, res) + 2, res)
}

/// L-shaped corridor: a horizontal arm across the top and a vertical arm down
/// the right side, each `arm` pixels wide, inside a `size x size` raster.
pub fn l_shape(size: usize, arm: usize, res: f64) -> GridMap {
    let mut m = GridMap::filled(size, size, res, CellState::Occupied).expect("non-empty map");
    fill_rect(&mut m, 1, 1, 1 + arm, size - 1, CellState::Free);
    fill_rect(&mut m, 1, size - 1 - arm, size - 1, size - 1, CellState::Free);
    m
}

/// Two rooms side by side joined by a door in the dividing wall.
pub fn two_rooms(w: usize, h: usize, res: f64) -> GridMap {
    let mut m = bordered_room(w, h, res);
    let mid = w / 2;
    let door = (h / 5).max(3);
    for r in 1..h - 1 {
        if r < h / 2 - door / 2 || r >= h / 2 - door / 2 + door {
            m.set(r, mid, CellState::Occupied);
        }
    }
    m
}

/// Office floor: a central horizontal corridor with `rooms` rooms on each
/// side, each opening onto the corridor through a door.
pub fn office(w: usize, h: usize, rooms: usize, res: f64) -> GridMap {
    let mut m = bordered_room(w, h, res);
    let rooms = rooms.max(1);
    let corridor_h = (h / 6).max(5);
    let top = (h - corridor_h) / 2;
    let bottom = top + corridor_h;
    let wall = 2usize;
    // corridor walls
    fill_rect(&mut m, top - wall, 1, top, w - 1, CellState::Occupied);
    fill_rect(&mut m, bottom, 1, bottom + wall, w - 1, CellState::Occupied);
    let room_w = (w - 2) / rooms;
    let door = (room_w / 4).clamp(3, corridor_h.max(3));
    for k in 0..rooms {
        let c0 = 1 + k * room_w;
        if k > 0 {
            // partitions
            fill_rect(&mut m, 1, c0, top, c0 + wall, CellState::Occupied);
            fill_rect(&mut m, bottom, c0, h - 1, c0 + wall, CellState::Occupied);
        }
        let dc = c0 + room_w / 2 - door / 2;
        fill_rect(&mut m, top - wall, dc, top, dc + door, CellState::Free);
        fill_rect(&mut m, bottom, dc, bottom + wall, dc + door, CellState::Free);
    }
    m
}

/// Stamps a sealed rectangular room (walls included) onto `map` at the
/// given pixel rectangle.
pub fn add_sealed_room(map: &mut GridMap, r0: usize, c0: usize, r1: usize, c1: usize) {
    fill_rect(map, r0, c0, r1, c1, CellState::Occupied);
    fill_rect(map, r0 + 1, c0 + 1, r1 - 1, c1 - 1, CellState::Free);
}

/// Carves a free rectangle (e.g. a door) into `map`.
pub fn carve(map: &mut GridMap, r0: usize, c0: usize, r1: usize, c1: usize) {
    fill_rect(map, r0, c0, r1, c1, CellState::Free);
}

/// Noise model for [`noisy_run`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdometryNoise {
    /// Standard deviation of translational noise per metre travelled.
    pub trans_per_m: f64,
    /// Standard deviation of rotational noise per metre travelled (rad/m).
    pub rot_per_m: f64,
}

impl Default for OdometryNoise {
    fn default() -> Self {
        Self {
            trans_per_m: 0.01,
            rot_per_m: 0.002,
        }
    }
}

/// Smooth random ground-truth path of `steps` poses spaced `step_m` apart.
pub fn wandering_path(steps: usize, step_m: f64, seed: u64) -> Vec<Pose2> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let turn = Normal::new(0.0, 0.15).expect("valid sigma");
    let mut pose = Pose2::identity();
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        out.push(pose);
        let d = RelPose::new(step_m, 0.0, turn.sample(&mut rng));
        pose = pose.compose(&d);
    }
    out
}

/// Dead-reckoned estimate of `truth` corrupted by odometry noise; timestamps
/// are one second apart.
pub fn noisy_run(id: &str, truth: &[Pose2], noise: OdometryNoise, seed: u64) -> RunLog {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("valid sigma");
    let mut est = truth[0];
    let mut samples = Vec::with_capacity(truth.len());
    samples.push(PoseSample {
        t: 0.0,
        estimated: est,
        truth: truth[0],
    });
    for k in 1..truth.len() {
        let d = crate::trajectory::ominus(&truth[k - 1], &truth[k]);
        let len = d.translation_norm();
        let noisy = RelPose::new(
            d.dx + std_normal.sample(&mut rng) * noise.trans_per_m * len,
            d.dy + std_normal.sample(&mut rng) * noise.trans_per_m * len,
            d.dtheta + std_normal.sample(&mut rng) * noise.rot_per_m * len,
        );
        est = est.compose(&noisy);
        samples.push(PoseSample {
            t: k as f64,
            estimated: est,
            truth: truth[k],
        });
    }
    RunLog::new(id, samples).expect("synthetic runs are well formed")
}

/// Normal draws with mean `mean` rescaled so their unbiased sample standard
/// deviation is exactly `sigma`.
pub fn normal_draws_exact(n: usize, mean: f64, sigma: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
    let m = z.iter().sum::<f64>() / n as f64;
    let s = (z.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
    z.iter().map(|v| mean + (v - m) / s * sigma).collect()
}
