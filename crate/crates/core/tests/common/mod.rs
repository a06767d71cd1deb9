#![allow(dead_code)]

pub mod oracle;

use delayscale::controller::{Controller, ControllerParams, ControllerTuning};
use delayscale::gains::{synthesize, GainSet, SynthesisOptions};
use delayscale::model::{build_example, BoundEnvelope, ExampleParams, PlantModel};

pub struct Fixture {
    pub model: PlantModel,
    pub env: BoundEnvelope,
    pub gains: GainSet,
}

pub fn fixture(params: &ExampleParams) -> Fixture {
    let (model, env) = build_example(params).expect("example builds");
    let gains = synthesize(&env, model.n(), &SynthesisOptions::default()).expect("gains certify");
    Fixture { model, env, gains }
}

impl Fixture {
    pub fn controller(&self, tuning: ControllerTuning) -> Controller {
        let params = ControllerParams::derive(tuning, &self.gains, &self.env, self.model.true_theta).unwrap();
        Controller::new(self.model.dynamics.clone(), self.env.clone(), self.gains.clone(), params).unwrap()
    }

    /// Tuning whose input-scaling switch `Π` stays representable at the
    /// magnitudes `r_u` reaches from rest.
    pub fn equilibrium_controller(&self) -> Controller {
        self.controller(ControllerTuning { pi_k: 1e-100, ..Default::default() })
    }
}
