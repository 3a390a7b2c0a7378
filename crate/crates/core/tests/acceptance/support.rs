use std::fmt::Display;
use std::io::Write;
use std::sync::{Mutex, MutexGuard};
use std::time::Instant;

use maefuse::imaging::{Image, Range};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Prints the verdict line for criterion `id`, then fails the test if it did not pass.
pub fn verdict(id: u32, title: &str, pass: bool, detail: impl Display) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let line = format!("[{tag}] criterion {id:>2}: {title} -- {detail}\n");
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(pass, "criterion {id} ({title}) failed: {detail}");
}

/// Held for the whole of every criterion so that timed sections never share the CPU
/// with another criterion.
pub fn exclusive() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

pub struct Timer(Instant);

impl Timer {
    pub fn start() -> Self {
        Self(Instant::now())
    }

    pub fn secs(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn noise(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Image {
    Image::gray(h, w, (0..h * w).map(|_| rng.random()).collect(), Range::Unit).unwrap()
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}
