use super::{Args, CalcError};

type Formula = fn(&Args<'_>) -> Result<f64, CalcError>;

const TABLE: &[(&str, Formula)] = &[
    ("calculate_framingham_risk_score", framingham),
    ("calculate_bmi", bmi),
    ("calculate_corrected_sodium", corrected_sodium),
    ("calculate_cha2ds2_vasc", cha2ds2_vasc),
    ("calculate_heart_score", heart_score),
    ("calculate_rcri", rcri),
    ("calculate_map", mean_arterial_pressure),
    ("calculate_anion_gap", anion_gap),
    ("calculate_creatinine_clearance", creatinine_clearance),
    ("calculate_corrected_calcium", corrected_calcium),
    ("calculate_qtc_bazett", qtc_bazett),
    ("calculate_curb65", curb65),
];

pub(super) const FUNCTION_NAMES: &[&str] = &[
    "calculate_framingham_risk_score",
    "calculate_bmi",
    "calculate_corrected_sodium",
    "calculate_cha2ds2_vasc",
    "calculate_heart_score",
    "calculate_rcri",
    "calculate_map",
    "calculate_anion_gap",
    "calculate_creatinine_clearance",
    "calculate_corrected_calcium",
    "calculate_qtc_bazett",
    "calculate_curb65",
];

pub(super) fn formula_for(function_name: &str) -> Option<Formula> {
    TABLE
        .iter()
        .find(|(name, _)| *name == function_name)
        .map(|(_, f)| *f)
}

fn positive(param: &str, value: f64) -> Result<f64, CalcError> {
    if value > 0.0 {
        Ok(value)
    } else {
        Err(CalcError::NonPositive {
            param: param.to_string(),
            value,
        })
    }
}

fn indicator(param: &str, value: u8) -> Result<u32, CalcError> {
    if value <= 1 {
        Ok(value as u32)
    } else {
        Err(CalcError::InvalidIndicator {
            param: param.to_string(),
            value: value as f64,
        })
    }
}

/// 10-year hard CHD risk in percent. `sex`: 0 female, 1 male; the other
/// flags are 0/1. Cholesterol in mg/dL, blood pressure in mmHg.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_framingham(
    age: f64,
    sex: u8,
    smoker_status: u8,
    total_cholesterol: f64,
    hdl_cholesterol: f64,
    systolic_bp: f64,
    bp_medication: u8,
) -> Result<f64, CalcError> {
    if !(30.0..=79.0).contains(&age) {
        return Err(CalcError::OutOfBounds {
            param: "age".into(),
            value: age,
            min: 30.0,
            max: 79.0,
        });
    }
    let male = indicator("sex", sex)? == 1;
    let smoker = indicator("smoker_status", smoker_status)? as f64;
    let treated = indicator("bp_medication", bp_medication)? as f64;
    let ln_age = age.ln();
    let ln_tc = positive("total_cholesterol", total_cholesterol)?.ln();
    let ln_hdl = positive("hdl_cholesterol", hdl_cholesterol)?.ln();
    let ln_sbp = positive("systolic_bp", systolic_bp)?.ln();

    let risk = if male {
        // Smoking interaction is capped at age 70 for men.
        let capped = if age > 70.0 { 70f64.ln() } else { ln_age };
        let age_smoker = capped * smoker;
        let l = 52.00961 * ln_age + 20.014077 * ln_tc - 0.905964 * ln_hdl
            + 1.305784 * ln_sbp
            + 0.241549 * treated
            + 12.096316 * smoker
            - 4.605038 * ln_age * ln_tc
            - 2.84367 * age_smoker
            - 2.93323 * ln_age * ln_age
            - 172.300168;
        1.0 - 0.9402f64.powf(l.exp())
    } else {
        let capped = if age > 78.0 { 78f64.ln() } else { ln_age };
        let age_smoker = capped * smoker;
        let l = 31.764001 * ln_age + 22.465206 * ln_tc - 1.187731 * ln_hdl
            + 2.552905 * ln_sbp
            + 0.420251 * treated
            + 13.07543 * smoker
            - 5.060998 * ln_age * ln_tc
            - 2.996945 * age_smoker
            - 146.5933061;
        1.0 - 0.98767f64.powf(l.exp())
    };
    Ok(risk * 100.0)
}

fn framingham(a: &Args<'_>) -> Result<f64, CalcError> {
    evaluate_framingham(
        a.real("age")?,
        a.index("sex")?,
        a.index("smoker_status")?,
        a.real("total_cholesterol")?,
        a.real("hdl_cholesterol")?,
        a.real("systolic_bp")?,
        a.index("bp_medication")?,
    )
}

/// Weight in kg, height in cm.
pub fn evaluate_bmi(weight: f64, height: f64) -> Result<f64, CalcError> {
    let weight = positive("weight", weight)?;
    let meters = positive("height", height)? / 100.0;
    Ok(weight / (meters * meters))
}

fn bmi(a: &Args<'_>) -> Result<f64, CalcError> {
    evaluate_bmi(a.real("weight")?, a.real("height")?)
}

/// Hillier (1999): sodium rises 2.4 mEq/L per 100 mg/dL of glucose above 100.
pub fn evaluate_corrected_sodium(
    measured_sodium: f64,
    serum_glucose: f64,
) -> Result<f64, CalcError> {
    let glucose = positive("serum_glucose", serum_glucose)?;
    Ok(measured_sodium + 0.024 * (glucose - 100.0))
}

fn corrected_sodium(a: &Args<'_>) -> Result<f64, CalcError> {
    evaluate_corrected_sodium(a.real("measured_sodium")?, a.real("serum_glucose")?)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Cha2ds2VascCriteria {
    /// 0: under 65, 1: 65-74, 2: 75 or older.
    pub age_band: u8,
    /// 0 female, 1 male.
    pub sex: u8,
    pub congestive_heart_failure: u8,
    pub hypertension: u8,
    pub stroke_tia: u8,
    pub vascular_disease: u8,
    pub diabetes: u8,
}

pub fn evaluate_cha2ds2_vasc(c: &Cha2ds2VascCriteria) -> Result<u32, CalcError> {
    let age = match c.age_band {
        0 => 0,
        1 => 1,
        2 => 2,
        v => {
            return Err(CalcError::InvalidIndicator {
                param: "age_band".into(),
                value: v as f64,
            })
        }
    };
    let female = 1 - indicator("sex", c.sex)?;
    Ok(age
        + female
        + indicator("congestive_heart_failure", c.congestive_heart_failure)?
        + indicator("hypertension", c.hypertension)?
        + 2 * indicator("stroke_tia", c.stroke_tia)?
        + indicator("vascular_disease", c.vascular_disease)?
        + indicator("diabetes", c.diabetes)?)
}

fn cha2ds2_vasc(a: &Args<'_>) -> Result<f64, CalcError> {
    let c = Cha2ds2VascCriteria {
        age_band: a.index("age_band")?,
        sex: a.index("sex")?,
        congestive_heart_failure: a.index("congestive_heart_failure")?,
        hypertension: a.index("hypertension")?,
        stroke_tia: a.index("stroke_tia")?,
        vascular_disease: a.index("vascular_disease")?,
        diabetes: a.index("diabetes")?,
    };
    evaluate_cha2ds2_vasc(&c).map(f64::from)
}

fn sum_levels(a: &Args<'_>, names: &[&str], max: u8) -> Result<f64, CalcError> {
    let mut total = 0u32;
    for name in names {
        let v = a.index(name)?;
        if v > max {
            return Err(CalcError::InvalidIndicator {
                param: name.to_string(),
                value: v as f64,
            });
        }
        total += v as u32;
    }
    Ok(total as f64)
}

fn heart_score(a: &Args<'_>) -> Result<f64, CalcError> {
    sum_levels(
        a,
        &["history", "ekg", "age_band", "risk_factors", "troponin"],
        2,
    )
}

fn rcri(a: &Args<'_>) -> Result<f64, CalcError> {
    sum_levels(
        a,
        &[
            "high_risk_surgery",
            "ischemic_heart_disease",
            "congestive_heart_failure",
            "cerebrovascular_disease",
            "insulin_treatment",
            "elevated_creatinine",
        ],
        1,
    )
}

fn curb65(a: &Args<'_>) -> Result<f64, CalcError> {
    sum_levels(
        a,
        &[
            "confusion",
            "bun_elevated",
            "respiratory_rate_high",
            "low_blood_pressure",
            "age_65_or_older",
        ],
        1,
    )
}

pub fn evaluate_mean_arterial_pressure(systolic_bp: f64, diastolic_bp: f64) -> f64 {
    (systolic_bp + 2.0 * diastolic_bp) / 3.0
}

fn mean_arterial_pressure(a: &Args<'_>) -> Result<f64, CalcError> {
    Ok(evaluate_mean_arterial_pressure(
        a.real("systolic_bp")?,
        a.real("diastolic_bp")?,
    ))
}

pub fn evaluate_anion_gap(sodium: f64, chloride: f64, bicarbonate: f64) -> f64 {
    sodium - (chloride + bicarbonate)
}

fn anion_gap(a: &Args<'_>) -> Result<f64, CalcError> {
    Ok(evaluate_anion_gap(
        a.real("sodium")?,
        a.real("chloride")?,
        a.real("bicarbonate")?,
    ))
}

/// Cockcroft-Gault creatinine clearance in mL/min. `sex`: 0 female, 1 male.
pub fn evaluate_creatinine_clearance(
    age: f64,
    sex: u8,
    weight: f64,
    serum_creatinine: f64,
) -> Result<f64, CalcError> {
    let female = indicator("sex", sex)? == 0;
    let cr = positive("serum_creatinine", serum_creatinine)?;
    let clearance = (140.0 - age) * weight / (72.0 * cr);
    Ok(if female { clearance * 0.85 } else { clearance })
}

fn creatinine_clearance(a: &Args<'_>) -> Result<f64, CalcError> {
    evaluate_creatinine_clearance(
        a.real("age")?,
        a.index("sex")?,
        a.real("weight")?,
        a.real("serum_creatinine")?,
    )
}

/// Calcium (mg/dL) corrected to a normal albumin of 4 g/dL.
pub fn evaluate_corrected_calcium(calcium: f64, albumin: f64) -> f64 {
    calcium + 0.8 * (4.0 - albumin)
}

fn corrected_calcium(a: &Args<'_>) -> Result<f64, CalcError> {
    Ok(evaluate_corrected_calcium(
        a.real("calcium")?,
        a.real("albumin")?,
    ))
}

/// Bazett QTc in msec.
pub fn evaluate_qtc_bazett(qt_interval: f64, heart_rate: f64) -> Result<f64, CalcError> {
    let rr = 60.0 / positive("heart_rate", heart_rate)?;
    Ok(qt_interval / rr.sqrt())
}

fn qtc_bazett(a: &Args<'_>) -> Result<f64, CalcError> {
    evaluate_qtc_bazett(a.real("qt_interval")?, a.real("heart_rate")?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_and_names_agree() {
        assert_eq!(TABLE.len(), FUNCTION_NAMES.len());
        for (name, _) in TABLE {
            assert!(FUNCTION_NAMES.contains(name));
        }
    }

    #[test]
    fn framingham_errors() {
        assert!(matches!(
            evaluate_framingham(80.0, 1, 0, 200.0, 50.0, 120.0, 0),
            Err(CalcError::OutOfBounds { .. })
        ));
        assert!(matches!(
            evaluate_framingham(50.0, 1, 0, 0.0, 50.0, 120.0, 0),
            Err(CalcError::NonPositive { param, .. }) if param == "total_cholesterol"
        ));
        assert!(matches!(
            evaluate_framingham(50.0, 1, 0, 200.0, 50.0, -1.0, 0),
            Err(CalcError::NonPositive { param, .. }) if param == "systolic_bp"
        ));
        assert!(matches!(
            evaluate_framingham(50.0, 2, 0, 200.0, 50.0, 120.0, 0),
            Err(CalcError::InvalidIndicator { .. })
        ));
    }

    #[test]
    fn corrected_sodium_reference_glucose() {
        assert_eq!(evaluate_corrected_sodium(140.0, 100.0).unwrap(), 140.0);
        assert!(matches!(
            evaluate_corrected_sodium(140.0, 0.0),
            Err(CalcError::NonPositive { .. })
        ));
    }

    #[test]
    fn cha2ds2_vasc_edges() {
        let none = Cha2ds2VascCriteria {
            sex: 1,
            ..Default::default()
        };
        assert_eq!(evaluate_cha2ds2_vasc(&none).unwrap(), 0);
        let female_only = Cha2ds2VascCriteria::default();
        assert_eq!(evaluate_cha2ds2_vasc(&female_only).unwrap(), 1);
        let bad = Cha2ds2VascCriteria {
            diabetes: 3,
            ..none
        };
        assert!(matches!(
            evaluate_cha2ds2_vasc(&bad),
            Err(CalcError::InvalidIndicator { .. })
        ));
    }
}
