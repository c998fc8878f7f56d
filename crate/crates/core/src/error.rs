use thiserror::Error;

pub type Result<T, E = SimError> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("unstable time step: dt = {dt} exceeds dx^2 = {dx2} (stability requires dt <= dx^2)", dx2 = dx * dx)]
    Stability { dt: f64, dx: f64 },

    #[error("weights left the representable range at step {step}")]
    Overflow { step: usize },

    #[error("boundary leak: {mass:.3e} of the propagator mass sits within {margin} sites of the domain edge (limit {limit:.0e})")]
    BoundaryLeak { mass: f64, margin: usize, limit: f64 },

    #[error("out of domain: {0}")]
    OutOfDomain(String),

    #[error("density underflowed everywhere")]
    DegenerateDensity,

    #[error("empty ensemble")]
    EmptyEnsemble,

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("replica {replica}: Y exceeds log(1+X) by {excess:.3e}")]
    PathwiseViolation { replica: u64, excess: f64 },

    #[error("quadrature needs {nodes} nodes, budget is {budget}")]
    TooLarge { nodes: f64, budget: f64 },

    #[error("statistics: {0}")]
    Stats(String),

    #[error("replica {replica}: {source}")]
    Replica {
        replica: u64,
        #[source]
        source: Box<SimError>,
    },
}

impl SimError {
    pub fn in_replica(self, replica: u64) -> Self {
        match self {
            e @ SimError::Replica { .. } => e,
            e => SimError::Replica { replica, source: Box::new(e) },
        }
    }
}
