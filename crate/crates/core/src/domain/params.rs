use std::fmt;

use serde::{Deserialize, Serialize};

use super::DomainError;

/// The six independent geometry parameters, in storage order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamName {
    #[serde(rename = "R_A")]
    AreaRatio,
    #[serde(rename = "N_H")]
    HoleCount,
    #[serde(rename = "D_M")]
    MixingTubeDiameter,
    #[serde(rename = "R_D")]
    LanceDiameterRatio,
    #[serde(rename = "R_L")]
    LengthRatio,
    #[serde(rename = "L_P")]
    PlenumLength,
}

impl ParamName {
    pub const ALL: [ParamName; 6] = [
        ParamName::AreaRatio,
        ParamName::HoleCount,
        ParamName::MixingTubeDiameter,
        ParamName::LanceDiameterRatio,
        ParamName::LengthRatio,
        ParamName::PlenumLength,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            ParamName::AreaRatio => "R_A",
            ParamName::HoleCount => "N_H",
            ParamName::MixingTubeDiameter => "D_M",
            ParamName::LanceDiameterRatio => "R_D",
            ParamName::LengthRatio => "R_L",
            ParamName::PlenumLength => "L_P",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn range(self) -> ParamRange {
        PARAM_RANGES[self.index()]
    }

    pub fn description(self) -> &'static str {
        match self {
            ParamName::AreaRatio => {
                "free area at vortex generators over premixing tube cross section"
            }
            ParamName::HoleCount => "number of fuel injection holes on the lance",
            ParamName::MixingTubeDiameter => "premixing tube diameter [mm]",
            ParamName::LanceDiameterRatio => "lance diameter over premixing tube diameter",
            ParamName::LengthRatio => "premixing tube length over its diameter",
            ParamName::PlenumLength => "combustor plenum length [mm]",
        }
    }
}

impl fmt::Display for ParamName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRange {
    pub min: f64,
    pub max: f64,
}

impl ParamRange {
    pub fn width(&self) -> f64 {
        self.max - self.min
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }

    /// Affine map onto [0, 1].
    pub fn to_unit(&self, v: f64) -> f64 {
        (v - self.min) / self.width()
    }

    pub fn from_unit(&self, u: f64) -> f64 {
        self.min + u * self.width()
    }
}

/// Design-space bounds, indexed like [`ParamName::ALL`].
pub const PARAM_RANGES: [ParamRange; 6] = [
    ParamRange { min: 0.63, max: 0.83 },
    ParamRange { min: 2.0, max: 10.0 },
    ParamRange { min: 20.0, max: 45.0 },
    ParamRange { min: 0.35, max: 0.55 },
    ParamRange { min: 4.0, max: 12.0 },
    ParamRange { min: 200.0, max: 900.0 },
];

pub const N_PARAMS: usize = 6;
pub const N_LABELS: usize = 3;

/// One combustor geometry.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignParams {
    /// R_A, dimensionless
    pub area_ratio: f64,
    /// N_H
    pub hole_count: u32,
    /// D_M in mm
    pub mixing_tube_diameter: f64,
    /// R_D, dimensionless
    pub lance_diameter_ratio: f64,
    /// R_L, dimensionless
    pub length_ratio: f64,
    /// L_P in mm
    pub plenum_length: f64,
}

impl DesignParams {
    /// Materializes a continuous 6-vector: N_H is rounded to the nearest integer.
    /// Performs no range check, see [`DesignParams::validate`].
    pub fn from_continuous(v: [f64; N_PARAMS]) -> Self {
        let n_h = v[1].round();
        let hole_count = if n_h.is_finite() && n_h >= 0.0 {
            n_h.min(u32::MAX as f64) as u32
        } else {
            0
        };
        Self {
            area_ratio: v[0],
            hole_count,
            mixing_tube_diameter: v[2],
            lance_diameter_ratio: v[3],
            length_ratio: v[4],
            plenum_length: v[5],
        }
    }

    /// Checked constructor from a continuous vector.
    pub fn try_from_continuous(v: [f64; N_PARAMS]) -> Result<Self, DomainError> {
        if !v[1].is_finite() || v[1].round() < 0.0 {
            return Err(DomainError::OutOfRange {
                param: ParamName::HoleCount,
                value: v[1],
                range: ParamName::HoleCount.range(),
            });
        }
        let p = Self::from_continuous(v);
        p.validate()?;
        Ok(p)
    }

    pub fn to_array(&self) -> [f64; N_PARAMS] {
        [
            self.area_ratio,
            self.hole_count as f64,
            self.mixing_tube_diameter,
            self.lance_diameter_ratio,
            self.length_ratio,
            self.plenum_length,
        ]
    }

    pub fn get(&self, name: ParamName) -> f64 {
        self.to_array()[name.index()]
    }

    /// Checks every coordinate against the design-space bounds.
    pub fn validate(&self) -> Result<(), DomainError> {
        for (name, v) in ParamName::ALL.iter().zip(self.to_array()) {
            let range = name.range();
            if !v.is_finite() || !range.contains(v) {
                return Err(DomainError::OutOfRange {
                    param: *name,
                    value: v,
                    range,
                });
            }
        }
        Ok(())
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_ok()
    }

    /// Coordinates affinely mapped to [0, 1] over their ranges.
    pub fn to_unit(&self) -> [f64; N_PARAMS] {
        let mut u = self.to_array();
        for (v, r) in u.iter_mut().zip(PARAM_RANGES.iter()) {
            *v = r.to_unit(*v);
        }
        u
    }

    /// Centre of every range; N_H rounds 6.0 to 6.
    pub fn midpoint() -> Self {
        let mut v = [0.0; N_PARAMS];
        for (x, r) in v.iter_mut().zip(PARAM_RANGES.iter()) {
            *x = 0.5 * (r.min + r.max);
        }
        Self::from_continuous(v)
    }

    pub fn dependent_geometry(&self) -> DependentGeometry {
        DependentGeometry::derive(self)
    }
}

/// The three performance labels `y = (U_M, dp_rel, G)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LabelName {
    #[serde(rename = "U_M")]
    Unmixedness,
    #[serde(rename = "dp_rel")]
    PressureLoss,
    #[serde(rename = "G")]
    GrowthRate,
}

impl LabelName {
    pub const ALL: [LabelName; 3] = [
        LabelName::Unmixedness,
        LabelName::PressureLoss,
        LabelName::GrowthRate,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            LabelName::Unmixedness => "U_M",
            LabelName::PressureLoss => "dp_rel",
            LabelName::GrowthRate => "G",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for LabelName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerformanceLabels {
    /// U_M: unmixedness at the premixing tube outlet
    pub unmixedness: f64,
    /// dp_rel: relative total pressure loss
    pub pressure_loss: f64,
    /// G: thermoacoustic growth rate
    pub growth_rate: f64,
}

impl PerformanceLabels {
    pub fn new(unmixedness: f64, pressure_loss: f64, growth_rate: f64) -> Self {
        Self {
            unmixedness,
            pressure_loss,
            growth_rate,
        }
    }

    pub fn from_array(v: [f64; N_LABELS]) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn to_array(&self) -> [f64; N_LABELS] {
        [self.unmixedness, self.pressure_loss, self.growth_rate]
    }

    pub fn get(&self, name: LabelName) -> f64 {
        self.to_array()[name.index()]
    }

    /// Physical admissibility: U_M ≥ 0, dp_rel > 0, G ≥ −1.
    ///
    /// Used for user-supplied targets. The analytic oracle's growth rate dips
    /// slightly below −1 in a corner of the design space, so oracle output is
    /// not run through this check.
    pub fn validate(&self) -> Result<(), DomainError> {
        let ok = |v: f64| v.is_finite();
        if !ok(self.unmixedness) || self.unmixedness < 0.0 {
            return Err(DomainError::InvalidLabel {
                label: LabelName::Unmixedness,
                value: self.unmixedness,
            });
        }
        if !ok(self.pressure_loss) || self.pressure_loss <= 0.0 {
            return Err(DomainError::InvalidLabel {
                label: LabelName::PressureLoss,
                value: self.pressure_loss,
            });
        }
        if !ok(self.growth_rate) || self.growth_rate < -1.0 {
            return Err(DomainError::InvalidLabel {
                label: LabelName::GrowthRate,
                value: self.growth_rate,
            });
        }
        Ok(())
    }
}

pub const CHAMBER_LENGTH_MM: f64 = 1000.0;
pub const DUMP_RATIO: f64 = 4.0;

/// Geometry derived from the independent parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DependentGeometry {
    pub mixing_tube_length: f64,
    pub lance_diameter: f64,
    pub lance_length: f64,
    pub chamber_diameter: f64,
    pub chamber_length: f64,
    pub dump_ratio: f64,
    pub vortex_generators: u32,
    pub air_mass_flow: f64,
    pub fuel_mass_flow: f64,
}

impl DependentGeometry {
    pub fn derive(x: &DesignParams) -> Self {
        let l_m = x.mixing_tube_diameter * x.length_ratio;
        let (air, fuel) = mass_flows(x, &OperatingPoint::default());
        Self {
            mixing_tube_length: l_m,
            lance_diameter: x.lance_diameter_ratio * x.mixing_tube_diameter,
            lance_length: 0.2 * l_m,
            chamber_diameter: DUMP_RATIO * x.mixing_tube_diameter,
            chamber_length: CHAMBER_LENGTH_MM,
            dump_ratio: DUMP_RATIO,
            vortex_generators: vortex_generator_count(x.hole_count),
            air_mass_flow: air,
            fuel_mass_flow: fuel,
        }
    }
}

/// Half the injection holes, never fewer than two.
pub fn vortex_generator_count(hole_count: u32) -> u32 {
    ((hole_count as f64 / 2.0).round() as u32).max(2)
}

pub const SPECIFIC_GAS_CONSTANT_AIR: f64 = 287.0;

/// Boundary conditions feeding the continuity estimate of the mass flows.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    /// bulk velocity at the premixing tube outlet [m/s]
    pub bulk_velocity: f64,
    /// global fuel mixture fraction
    pub fuel_fraction: f64,
    /// static pressure [Pa]
    pub pressure: f64,
    /// air inlet temperature [K]
    pub air_temperature: f64,
}

impl Default for OperatingPoint {
    fn default() -> Self {
        Self {
            bulk_velocity: 100.0,
            fuel_fraction: 0.03,
            pressure: 20e5,
            air_temperature: 773.15,
        }
    }
}

impl OperatingPoint {
    /// Ideal-gas density of air at the operating point [kg/m³].
    pub fn density(&self) -> f64 {
        self.pressure / (SPECIFIC_GAS_CONSTANT_AIR * self.air_temperature)
    }
}

/// `(mdot_A, mdot_F)` in kg/s from continuity and the global fuel fraction.
pub fn mass_flows(x: &DesignParams, op: &OperatingPoint) -> (f64, f64) {
    let radius_m = 0.5 * x.mixing_tube_diameter * 1e-3;
    let area = std::f64::consts::PI * radius_m * radius_m;
    let air = op.bulk_velocity * op.density() * area;
    let fuel = air * op.fuel_fraction / (1.0 - op.fuel_fraction);
    (air, fuel)
}
