use std::f64::consts::TAU;

use crate::error::{domain, Result};
use crate::netcore::{ForwardTrace, MlpParams, MlpSpec};
use crate::Point;

use super::mixture::mixture_velocity;
use super::MixtureSpec;

/// Lowest noise level at which fields are evaluated; requests below it are
/// served with the value at the floor.
pub const SIGMA_FLOOR: f64 = 1e-3;

/// Width of the network input: position plus `(σ, sin 2πσ, cos 2πσ)`.
pub const EMBED_DIM: usize = 5;

pub fn embed(z: Point, sigma: f64) -> [f64; EMBED_DIM] {
    [z[0], z[1], sigma, (TAU * sigma).sin(), (TAU * sigma).cos()]
}

/// A velocity field `v(z, σ)` in the plane.
pub trait Field: Sync {
    fn velocity(&self, z: Point, sigma: f64) -> Point;
}

impl<F: Field + ?Sized> Field for &F {
    fn velocity(&self, z: Point, sigma: f64) -> Point {
        (**self).velocity(z, sigma)
    }
}

/// Closed-form marginal field of a Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticField {
    spec: MixtureSpec,
}

impl AnalyticField {
    pub fn new(spec: MixtureSpec) -> Result<Self> {
        spec.validate()?;
        Ok(AnalyticField { spec })
    }

    pub fn spec(&self) -> &MixtureSpec {
        &self.spec
    }
}

impl Field for AnalyticField {
    fn velocity(&self, z: Point, sigma: f64) -> Point {
        mixture_velocity(&self.spec, z, sigma.clamp(SIGMA_FLOOR, 1.0))
    }
}

/// MLP velocity field over [`embed`]ded inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnedField {
    params: MlpParams,
}

impl LearnedField {
    pub fn new(params: MlpParams) -> Result<Self> {
        let spec = params.spec();
        if spec.input_dim() != EMBED_DIM || spec.output_dim() != 2 {
            return domain(format!(
                "a velocity network maps {EMBED_DIM} inputs to 2 outputs, got {:?}",
                spec.layer_widths
            ));
        }
        Ok(LearnedField { params })
    }

    pub fn init(spec: &MlpSpec) -> Result<Self> {
        LearnedField::new(crate::netcore::init_params(spec)?)
    }

    pub fn params(&self) -> &MlpParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut MlpParams {
        &mut self.params
    }

    pub fn into_params(self) -> MlpParams {
        self.params
    }

    pub(crate) fn trace(&self, z: Point, sigma: f64) -> (Point, ForwardTrace) {
        let t = self
            .params
            .forward_trace(&embed(z, sigma))
            .expect("input width checked at construction");
        ([t.output[0], t.output[1]], t)
    }

    /// Adds `∂(out_grad · v)/∂θ` into `grads` and returns `∂(out_grad · v)/∂z`.
    pub(crate) fn backprop(
        &self,
        trace: &ForwardTrace,
        out_grad: Point,
        grads: &mut [f64],
    ) -> Point {
        let gx = self
            .params
            .backward_trace(trace, &out_grad, None, grads)
            .expect("shapes checked at construction");
        [gx[0], gx[1]]
    }
}

impl Field for LearnedField {
    fn velocity(&self, z: Point, sigma: f64) -> Point {
        self.trace(z, sigma).0
    }
}

/// Either kind of field, as carried through configs and reports.
#[derive(Debug, Clone, PartialEq)]
pub enum VelocityField {
    Analytic(AnalyticField),
    Learned(LearnedField),
}

impl VelocityField {
    pub fn kind(&self) -> &'static str {
        match self {
            VelocityField::Analytic(_) => "analytic",
            VelocityField::Learned(_) => "learned",
        }
    }

    pub fn as_learned(&self) -> Option<&LearnedField> {
        match self {
            VelocityField::Learned(l) => Some(l),
            VelocityField::Analytic(_) => None,
        }
    }
}

impl Field for VelocityField {
    fn velocity(&self, z: Point, sigma: f64) -> Point {
        match self {
            VelocityField::Analytic(a) => a.velocity(z, sigma),
            VelocityField::Learned(l) => l.velocity(z, sigma),
        }
    }
}

impl From<AnalyticField> for VelocityField {
    fn from(a: AnalyticField) -> Self {
        VelocityField::Analytic(a)
    }
}

impl From<LearnedField> for VelocityField {
    fn from(l: LearnedField) -> Self {
        VelocityField::Learned(l)
    }
}

/// `inner + shift`, a field with a known constant bias.
#[derive(Debug, Clone)]
pub struct ShiftedField<F> {
    pub inner: F,
    pub shift: Point,
}

impl<F: Field> Field for ShiftedField<F> {
    fn velocity(&self, z: Point, sigma: f64) -> Point {
        let v = self.inner.velocity(z, sigma);
        [v[0] + self.shift[0], v[1] + self.shift[1]]
    }
}

/// Adapts a closure into a [`Field`].
pub struct FnField<F>(pub F);

impl<F> Field for FnField<F>
where
    F: Fn(Point, f64) -> Point + Sync,
{
    fn velocity(&self, z: Point, sigma: f64) -> Point {
        (self.0)(z, sigma)
    }
}
