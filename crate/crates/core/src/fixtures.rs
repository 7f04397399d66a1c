//! Small hand-built datasets with known answers.
//!
//! `F1` holds two cardiology stays in March 2015:
//!
//! * P1 (F, born 1950-06-15): admitted 03-01 08:00, stent 03-02, charge
//!   10000.00 on 03-04, discharged 03-10 08:00, then an unkeyed lab on 03-11
//!   10:00 inside the grace window. Five events, LOS 9.0 days.
//! * P2 (M, born 1940-01-20): admitted 03-05 10:00, stent, sepsis flag at
//!   12:00 and antibiotic at 12:45, charge 3000.00 and cost 4500.00, died and
//!   discharged 03-07 10:00. LOS 2.0 days.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use chrono::{Datelike, Duration, NaiveDate};

pub const F1_ADT: &str = "\
id_registro,tipo,data,paciente,atendimento,setor,nascimento,sexo
r1,ADMISSAO,01/03/2015 08:00,P1,A1,cardiology,15/06/1950,F
r2,ALTA,10/03/2015 08:00,P1,A1,cardiology,15/06/1950,F
r3,ADMISSAO,05/03/2015 10:00,P2,A2,cardiology,20/01/1940,M
r4,OBITO,07/03/2015 10:00,P2,A2,cardiology,20/01/1940,M
r5,ALTA,07/03/2015 10:00,P2,A2,cardiology,20/01/1940,M
";

pub const F1_BILLING: &str = r#"{"account_no":"A1","cost_center":"cardiology","entry_type":"charge","item":"stent kit","patient_ref":"P1","posted_at":1425470400,"txn_id":"b1","valor":"10000.00"}
{"account_no":"A2","cost_center":"cardiology","entry_type":"charge","item":"icu day","patient_ref":"P2","posted_at":1425632400,"txn_id":"b2","valor":"3000.00"}
{"account_no":"A2","cost_center":"cardiology","entry_type":"cost","item":"icu day","patient_ref":"P2","posted_at":1425632400,"txn_id":"b3","valor":"4500.00"}
"#;

pub const F1_CLINICAL: &str = r#"{"category":"procedure","code":"stent","name":"coronary stent","obs_id":"c1","recorded":"2015-03-02T08:00:00-03:00","subject":"P1","unit":"cardiology","visit":"A1"}
{"category":"lab","code":"troponin","obs_id":"c2","recorded":"2015-03-11T10:00:00Z","subject":"P1","unit":"cardiology","value":"0.01"}
{"category":"procedure","code":"stent","name":"coronary stent","obs_id":"c3","recorded":"2015-03-05T11:00:00Z","subject":"P2","unit":"cardiology","visit":"A2"}
{"category":"sepsis_flag","obs_id":"c4","recorded":"2015-03-05T12:00:00Z","subject":"P2","unit":"cardiology","visit":"A2"}
{"category":"medication","class":"antibiotic","name":"ceftriaxone","obs_id":"c5","recorded":"2015-03-05T12:45:00Z","subject":"P2","unit":"cardiology","visit":"A2"}
"#;

/// Config text for a dataset directory holding the three standard files.
pub fn config_text(bed_capacity: u32) -> String {
    format!(
        r#"repository = "repo"
bed_capacity = {bed_capacity}
antibiotic_classes = ["antibiotic"]

[linkage]
grace_window_hours = 72
session_gap_hours = 24

[server]
bind = "127.0.0.1"
port = 8080

[[sources]]
source_id = "adt"
path = "adt.csv"
format = "CSV"
mapping_profile = "tasy_adt"
kind = "ADT"

[[sources]]
source_id = "billing"
path = "billing.jsonl"
format = "JSONL"
mapping_profile = "billing_v1"
kind = "BILLING"

[[sources]]
source_id = "clinical"
path = "clinical.jsonl"
format = "JSONL"
mapping_profile = "clinical_v1"
kind = "CLINICAL"
"#
    )
}

/// Writes F1's raw sources and an `eoc.toml` (bed capacity 10) into `dir`;
/// returns the config path.
pub fn write_f1(dir: &Path) -> io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("adt.csv"), F1_ADT)?;
    fs::write(dir.join("billing.jsonl"), F1_BILLING)?;
    fs::write(dir.join("clinical.jsonl"), F1_CLINICAL)?;
    let cfg = dir.join("eoc.toml");
    fs::write(&cfg, config_text(10))?;
    Ok(cfg)
}

/// Writes ADT-only sources whose monthly admission counts are `counts`,
/// starting in `first_month`. Each stay lasts one day; the billing and
/// clinical files are empty. Returns the config path.
pub fn write_monthly_admissions(
    dir: &Path,
    first_month: NaiveDate,
    counts: &[u32],
) -> io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut adt = String::from("id_registro,tipo,data,paciente,atendimento,setor,nascimento,sexo\n");
    let mut row = 0;
    for (m, &n) in counts.iter().enumerate() {
        let month = first_month
            .with_day(1)
            .unwrap()
            .checked_add_months(chrono::Months::new(m as u32))
            .unwrap();
        for i in 0..n {
            let adm = month.and_hms_opt(8, 0, 0).unwrap() + Duration::days((i % 27) as i64);
            let dis = adm + Duration::days(1);
            let pid = format!("L{m}-{i}");
            for (tipo, at) in [("ADMISSAO", adm), ("ALTA", dis)] {
                row += 1;
                adt.push_str(&format!(
                    "m{row},{tipo},{},{pid},{pid}-A,cardiology,01/01/1960,F\n",
                    at.format("%d/%m/%Y %H:%M")
                ));
            }
        }
    }
    fs::write(dir.join("adt.csv"), adt)?;
    fs::write(dir.join("billing.jsonl"), "")?;
    fs::write(dir.join("clinical.jsonl"), "")?;
    let cfg = dir.join("eoc.toml");
    fs::write(&cfg, config_text(100))?;
    Ok(cfg)
}

/// Lengths of stay, in days, of the planted two-cluster fixture.
pub const LOS_FIXTURE: [f64; 6] = [1.0, 1.2, 0.8, 9.5, 10.0, 10.5];

/// Writes one closed ADT stay per entry of [`LOS_FIXTURE`], all admitted in
/// March 2015. Returns the config path.
pub fn write_los_fixture(dir: &Path) -> io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut adt = String::from("id_registro,tipo,data,paciente,atendimento,setor,nascimento,sexo\n");
    for (i, los) in LOS_FIXTURE.iter().enumerate() {
        let adm = NaiveDate::from_ymd_opt(2015, 3, 1 + i as u32).unwrap().and_hms_opt(8, 0, 0).unwrap();
        let dis = adm + Duration::minutes((los * 1440.0).round() as i64);
        for (n, (tipo, at)) in [("ADMISSAO", adm), ("ALTA", dis)].into_iter().enumerate() {
            adt.push_str(&format!(
                "k{i}{n},{tipo},{},K{i},K{i}-A,orthopedics,01/01/1970,M\n",
                at.format("%d/%m/%Y %H:%M")
            ));
        }
    }
    fs::write(dir.join("adt.csv"), adt)?;
    fs::write(dir.join("billing.jsonl"), "")?;
    fs::write(dir.join("clinical.jsonl"), "")?;
    let cfg = dir.join("eoc.toml");
    fs::write(&cfg, config_text(10))?;
    Ok(cfg)
}
