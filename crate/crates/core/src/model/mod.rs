pub mod assumptions;
pub mod coefficient;
pub mod equilibrium;
pub mod expr;
pub mod presets;
pub mod spec;

pub use assumptions::{
    check_assumptions, pricing_truncation, truncation_level, AssumptionReport, SampleBox,
    TruncationParams,
};
pub use coefficient::{parse_coefficient, CoefficientFn, Table};
pub use equilibrium::{equilibrium_model, EquilibriumPoint, EquilibriumSpec, Utility};
pub use expr::{parse, Expr, ParseError, Program};
pub use spec::{DriverFn, GenericDrivers, Mode, ModelBuilder, ModelSpec, PointCoeffs};
