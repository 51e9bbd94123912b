//! The bundled Sun-Earth-Moon scenario ("paper-sem").
//!
//! The Sun sits fixed at the origin. The Earth circles it at unit distance and
//! feels only the Sun. The Moon circles the Earth and feels only the Earth;
//! it moves in the Earth's frame so that it stays bound while the Earth
//! accelerates around the Sun. Masses and distances are nondimensional
//! choices, not measured values.

use crate::dynamics::{BodySpec, PhysicalSystem, State};

pub const SUN_MASS: f64 = 1.0;
pub const EARTH_MASS: f64 = 1e-3;
pub const MOON_MASS: f64 = 1e-3;
pub const EARTH_RADIUS: f64 = 1.0;
pub const MOON_RADIUS: f64 = 0.05;

/// Angular rate of a circular orbit of radius `r` around mass `m` (G = 1).
pub fn circular_rate(m: f64, r: f64) -> f64 {
    (m / (r * r * r)).sqrt()
}

/// Earth orbital period, 2π.
pub fn earth_period() -> f64 {
    2.0 * std::f64::consts::PI / circular_rate(SUN_MASS, EARTH_RADIUS)
}

/// Moon orbital period around the Earth, 2π/√8.
pub fn moon_period() -> f64 {
    2.0 * std::f64::consts::PI / circular_rate(EARTH_MASS, MOON_RADIUS)
}

pub fn paper_sem() -> PhysicalSystem {
    PhysicalSystem::new(
        vec![
            BodySpec::fixed_at("Sun", SUN_MASS, [0.0; 3]),
            BodySpec::free("Earth", EARTH_MASS).attracted_by(&["Sun"]),
            BodySpec::free("Moon", MOON_MASS)
                .attracted_by(&["Earth"])
                .hosted_by("Earth"),
        ],
        1.0,
    )
    .expect("bundled scenario is valid")
}

/// Both orbits circular and prograde, Moon starting on the far side of the
/// Earth from the Sun.
pub fn paper_sem_init() -> State {
    let ve = EARTH_RADIUS * circular_rate(SUN_MASS, EARTH_RADIUS);
    let vm = MOON_RADIUS * circular_rate(EARTH_MASS, MOON_RADIUS);
    State::new(
        0.0,
        vec![EARTH_RADIUS, 0.0, 0.0, EARTH_RADIUS + MOON_RADIUS, 0.0, 0.0],
        vec![0.0, ve, 0.0, 0.0, ve + vm, 0.0],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_shape() {
        let sys = paper_sem();
        assert_eq!(sys.n(), 6);
        assert_eq!(paper_sem_init().q.len(), 6);
        assert!((moon_period() - 2.0 * std::f64::consts::PI / 8f64.sqrt()).abs() < 1e-12);
    }
}
