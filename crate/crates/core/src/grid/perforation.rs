use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A circular inclusion removed from the flow domain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Circle {
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
}

impl Circle {
    pub fn new(cx: f64, cy: f64, r: f64) -> Self {
        Circle { cx, cy, r }
    }

    /// Strict interior test; points on the circle itself are outside.
    #[inline]
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let dx = x - self.cx;
        let dy = y - self.cy;
        dx * dx + dy * dy < self.r * self.r
    }
}

/// The set of perforations. Circles may overlap.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PerforationSpec {
    pub circles: Vec<Circle>,
    /// Seed the circles were drawn from, if they were generated.
    pub seed: Option<u64>,
}

impl PerforationSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn from_circles(circles: Vec<Circle>) -> Self {
        PerforationSpec { circles, seed: None }
    }

    pub fn is_empty(&self) -> bool {
        self.circles.is_empty()
    }

    pub fn covers(&self, x: f64, y: f64) -> bool {
        self.circles.iter().any(|c| c.contains(x, y))
    }
}

/// Draws `count` circles with centers uniform in `[0, lx] x [0, ly]` and radii
/// uniform in `[r_min, r_max]`.
///
/// The stream is ChaCha8 seeded from `seed`, so the result is identical on
/// every platform. Each circle consumes three draws in the order `cx, cy, r`.
pub fn random_perforations(
    seed: u64,
    count: usize,
    r_min: f64,
    r_max: f64,
    lx: f64,
    ly: f64,
) -> PerforationSpec {
    assert!(r_min > 0.0 && r_min <= r_max, "radius range must satisfy 0 < r_min <= r_max");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let circles = (0..count)
        .map(|_| {
            let cx = rng.random::<f64>() * lx;
            let cy = rng.random::<f64>() * ly;
            let r = r_min + rng.random::<f64>() * (r_max - r_min);
            Circle { cx, cy, r }
        })
        .collect();
    PerforationSpec { circles, seed: Some(seed) }
}
