use serde::{Deserialize, Serialize};

/// Non-fatal conditions recorded alongside results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Warning {
    /// Coordinate descent hit its sweep limit.
    NoConvergence { lambda: f64, sweeps: usize },
    /// A search window left `[1, n]` and was clipped.
    WindowOutOfRange { cluster: usize },
    /// Regressor columns with zero variance were left unscaled.
    DegenerateScaling { columns: Vec<usize>, response: bool },
    /// Segment refit was singular; the lasso level was used instead.
    SingularSegment { start: usize, end: usize },
    /// Days on which `N - I_f - R` was negative and clamped to zero.
    ClampedSusceptibles { region: String, days: usize },
    /// `Z_1` has no preceding neighbour increment and was set to zero.
    SpatialStartZero,
    /// Neighbour days missing from the target window, filled with zero increments.
    SpatialGap { region: String, days: usize },
    /// A zero distance or similarity score excluded a neighbour.
    ZeroDenominator { region: String },
    /// Lag order lowered after a singular lag matrix.
    LagFallback { from: usize, to: usize },
    /// Missing calendar days filled by carrying counts forward.
    GapFilled { region: String, days: usize },
    /// Derived recovered counts decrease on some day.
    NonMonotoneRecovered { region: String, days: usize },
    /// Region has no distance rows and is excluded from neighbour pools.
    Isolated { region: String },
    /// Simulated state left the feasible region and was clamped.
    StateUnderflow { days: usize },
    /// Region had fewer than 3 usable days after trimming and was skipped.
    RegionDropped { region: String, days: usize },
    /// Observed infected fell below zero after the reporting loss and was floored.
    ObservedFloor { region: String, days: usize },
}
