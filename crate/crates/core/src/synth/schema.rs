use crate::data::{CategoricalFeature, CohortSchema, SourceKind, SourceSchema};

// Positions of the sources in the schema; ids are one higher.
pub const STATIC: usize = 0;
pub const VITALS: usize = 1;
pub const LABS: usize = 2;
pub const MEDS: usize = 3;
pub const DIAGNOSIS: usize = 4;

pub const LAB_NAMES: [&str; 6] = ["glucose", "hba1c", "potassium", "creatinine", "lactate", "bicarbonate"];

pub const OTHER_DIAGNOSES: [&str; 6] = [
    "pneumonia",
    "heart failure",
    "trauma",
    "post-operative",
    "stroke",
    "acute kidney injury",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Drug {
    InsulinRegular,
    InsulinGlargine,
    Dextrose,
    Hydrocortisone,
    Heparin,
    Pantoprazole,
    Vancomycin,
    Norepinephrine,
}

impl Drug {
    pub const ALL: [Drug; 8] = [
        Drug::InsulinRegular,
        Drug::InsulinGlargine,
        Drug::Dextrose,
        Drug::Hydrocortisone,
        Drug::Heparin,
        Drug::Pantoprazole,
        Drug::Vancomycin,
        Drug::Norepinephrine,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Drug::InsulinRegular => "insulin regular",
            Drug::InsulinGlargine => "insulin glargine",
            Drug::Dextrose => "dextrose 50%",
            Drug::Hydrocortisone => "hydrocortisone",
            Drug::Heparin => "heparin",
            Drug::Pantoprazole => "pantoprazole",
            Drug::Vancomycin => "vancomycin",
            Drug::Norepinephrine => "norepinephrine",
        }
    }

    pub fn route(self) -> &'static str {
        match self {
            Drug::InsulinRegular | Drug::InsulinGlargine | Drug::Heparin => "sc",
            _ => "iv",
        }
    }

    pub fn frequency(self) -> &'static str {
        match self {
            Drug::InsulinRegular | Drug::Dextrose => "once",
            Drug::InsulinGlargine | Drug::Vancomycin => "q12h",
            Drug::Hydrocortisone => "q6h",
            Drug::Heparin => "q8h",
            Drug::Pantoprazole => "daily",
            Drug::Norepinephrine => "q1h",
        }
    }
}

const FREQUENCIES: [&str; 6] = ["once", "q1h", "q6h", "q8h", "q12h", "daily"];

/// The five sources the generator populates: static, vitals, labs,
/// medications and diagnoses.
pub fn synthetic_schema() -> CohortSchema {
    let source = |id: usize, name: &str, kind, numeric: &[&str], categorical: Vec<CategoricalFeature>, width| SourceSchema {
        source_id: id + 1,
        source_name: name.into(),
        kind,
        numeric_features: numeric.iter().map(|s| s.to_string()).collect(),
        categorical_features: categorical,
        embed_width: width,
        dimension_feature: None,
        frequency_feature: None,
    };
    let drugs: Vec<&str> = Drug::ALL.iter().map(|d| d.name()).collect();
    let mut labs = source(
        LABS,
        "labs",
        SourceKind::Lab,
        &["value"],
        vec![CategoricalFeature::new("lab_name", &LAB_NAMES)],
        16,
    );
    labs.dimension_feature = Some("lab_name".into());
    let mut meds = source(
        MEDS,
        "medications",
        SourceKind::Medication,
        &["dose"],
        vec![
            CategoricalFeature::new("drug", &drugs),
            CategoricalFeature::new("route", &["iv", "sc", "po"]),
            CategoricalFeature::new("frequency", &FREQUENCIES),
        ],
        16,
    );
    meds.dimension_feature = Some("drug".into());
    meds.frequency_feature = Some("frequency".into());
    let mut diagnoses = vec!["diabetes type 1", "diabetes type 2", "sepsis"];
    diagnoses.extend(OTHER_DIAGNOSES);
    CohortSchema::new(vec![
        source(
            STATIC,
            "static",
            SourceKind::General,
            &["age", "weight_kg"],
            vec![
                CategoricalFeature::new("sex", &["female", "male"]),
                CategoricalFeature::new("admission_type", &["medical", "surgical", "emergency"]),
            ],
            8,
        ),
        source(
            VITALS,
            "vitals",
            SourceKind::General,
            &["heart_rate", "resp_rate", "spo2", "temperature", "mean_arterial_pressure"],
            vec![],
            16,
        ),
        labs,
        meds,
        source(
            DIAGNOSIS,
            "diagnosis",
            SourceKind::General,
            &[],
            vec![CategoricalFeature::new("diagnosis", &diagnoses)],
            8,
        ),
    ])
    .expect("synthetic schema is valid")
}
