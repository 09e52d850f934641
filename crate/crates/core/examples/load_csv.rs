//! Load a trial from CSV with custom column names, an event indicator and a
//! standardized covariate, then check it against the stratum configuration.

use psurv::data::{load_csv, validate_consistency, CsvSchema, StatusRole, StrataConfig};

fn main() -> psurv::Result<()> {
    let path = std::env::temp_dir().join("psurv_load_csv_example.csv");
    std::fs::write(
        &path,
        "# exported from a trial database\n\
         pid,arm,treated,months,died,age\n\
         a1,0,0,14.2,1,61\n\
         a2,0,1,30.0,0,55\n\
         a3,1,1,22.5,1,70\n\
         a4,1,0,8.1,1,66\n\
         a5,1,1,36.0,0,49\n",
    )
    .map_err(|source| psurv::Error::Io { path: path.clone(), source })?;

    let schema = CsvSchema {
        id: Some("pid".into()),
        z: "arm".into(),
        d: "treated".into(),
        y: "months".into(),
        status: "died".into(),
        status_role: StatusRole::Event,
        covariates: vec!["age".into()],
    };
    let data = load_csv(&path, &schema, true)?;
    println!("{} units, covariates {:?}", data.len(), data.covariate_names());
    if let Some(Some(st)) = data.standardization().first() {
        println!("age standardized with mean {:.2} and sd {:.2}", st.mean, st.sd);
    }
    for u in data.units() {
        println!("  {} z={} d={} y={} censored={} x={:.3?}", u.id, u.z, u.d, u.y, u.censored, u.x);
    }
    for d in validate_consistency(&data, &StrataConfig::standard(true, true)) {
        println!("{:?}: {}", d.severity, d.message);
    }
    Ok(())
}
