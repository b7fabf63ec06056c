use rand::Rng;
use rand_distr::{Distribution, Poisson};

use super::SimError;

/// Number of departure slots a green of `green_s` seconds offers.
pub fn service_slots(green_s: f64, headway_s: f64) -> Result<usize, SimError> {
    if !(headway_s > 0.0) {
        return Err(SimError::ZeroHeadway);
    }
    Ok((green_s.max(0.0) / headway_s).floor() as usize)
}

/// Vehicles discharged from a standing queue of `queue_length` during one
/// green at saturation headway.
pub fn discharge_green(queue_length: usize, green_s: f64, headway_s: f64) -> Result<usize, SimError> {
    Ok(queue_length.min(service_slots(green_s, headway_s)?))
}

/// Poisson arrivals for every road over `[start, start + dt)`.
///
/// Returns one sorted vector of arrival timestamps per road; its length is the
/// road's arrival count.
pub fn spawn_arrivals<R: Rng + ?Sized>(
    start: f64,
    dt: f64,
    rates: &[f64],
    rng: &mut R,
) -> Result<Vec<Vec<f64>>, SimError> {
    if !(dt > 0.0) {
        return Err(SimError::NonPositiveInterval(dt));
    }
    if let Some((road, &rate)) = rates.iter().enumerate().find(|(_, r)| !(**r >= 0.0)) {
        return Err(SimError::NegativeRate { road, rate });
    }
    let mut out = Vec::with_capacity(rates.len());
    for &rate in rates {
        let mean = rate * dt;
        let count = if mean > 0.0 {
            // Poisson::new only fails for nonpositive / nonfinite means.
            Poisson::new(mean).expect("positive mean").sample(rng) as usize
        } else {
            0
        };
        let mut times: Vec<f64> = (0..count).map(|_| start + rng.random::<f64>() * dt).collect();
        times.sort_by(f64::total_cmp);
        out.push(times);
    }
    Ok(out)
}

/// Mean time since arrival of the vehicles in `queue` at time `now`.
pub fn avg_waiting<'a, I>(queue: I, now: f64) -> f64
where
    I: IntoIterator<Item = &'a f64>,
{
    let (sum, n) = queue
        .into_iter()
        .fold((0.0, 0usize), |(s, n), &t| (s + (now - t), n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}
