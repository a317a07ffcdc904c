//! Shared fixtures for the benchmarks.

use uavsec_core::geometry::UavState;
use uavsec_core::mpc::{initial_plan, HorizonPlan};
use uavsec_core::rates::SlotChannels;
use uavsec_core::{NoisePowers, Scenario, Vec3};

/// One slot midway along the default route, with the initial plan's beams.
pub struct SlotFixture {
    pub scenario: Scenario,
    pub channels: SlotChannels,
    pub noise: NoisePowers,
    pub plan: HorizonPlan,
}

impl SlotFixture {
    pub fn new(scenario: Scenario) -> Self {
        let q = Vec3::new(2500.0, 200.0, 700.0);
        let plan = initial_plan(&scenario, &UavState::at_rest(q), scenario.mpc.horizon + 1)
            .expect("default scenario plans");
        let channels = SlotChannels::at(
            &q,
            &scenario.users,
            &scenario.eavesdropper,
            &scenario.propagation,
        )
        .expect("position away from nodes");
        let noise = scenario.noise_powers();
        Self {
            scenario,
            channels,
            noise,
            plan,
        }
    }
}

impl Default for SlotFixture {
    fn default() -> Self {
        Self::new(Scenario::default())
    }
}
