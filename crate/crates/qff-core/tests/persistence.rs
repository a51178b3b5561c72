//! Output files parse cleanly with a strict CSV reader and round-trip
//! through the checkpoint format.

use qff_core::encoding::{EncodingConfig, Variant};
use qff_core::io::{checkpoint, csvout};
use qff_core::mlp::{Activation, MlpConfig, OutputTransform};
use qff_core::model::FieldModel;
use qff_core::tasks::sdf::{SdfGrid, GRID_RES};
use qff_core::tasks::{LogEntry, TrainRun};

#[test]
fn metrics_csv_is_strictly_parsable() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("metrics.csv");
    let mut run = TrainRun::default();
    run.push(LogEntry { step: 0, loss: 0.25, metric: 6.020599913279624, seconds: 0.001 });
    run.push(LogEntry { step: 100, loss: 0.001953125, metric: 27.0908474, seconds: 1.5 });
    csvout::write_metrics(&path, &run, "psnr").unwrap();

    let mut reader = csv::ReaderBuilder::new().from_path(&path).unwrap();
    let headers = reader.headers().unwrap().clone();
    assert_eq!(headers, csv::StringRecord::from(vec!["step", "loss", "psnr", "seconds"]));
    let mut steps = Vec::new();
    for record in reader.records() {
        let record = record.unwrap();
        assert_eq!(record.len(), 4);
        steps.push(record[0].parse::<u64>().unwrap());
        // Strict float parses; '.' decimal separator only.
        let _: f64 = record[1].parse().unwrap();
        let _: f64 = record[2].parse().unwrap();
        let _: f64 = record[3].parse().unwrap();
    }
    assert!(steps.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn infinity_sentinels_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("convergence.csv");
    let rows = vec![
        ("baseline".to_string(), Some(2000), 0.004),
        ("never".to_string(), None, 0.2),
    ];
    csvout::write_convergence(&path, &rows).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.contains("never,inf,0.2"));
    let mut reader = csv::ReaderBuilder::new().from_path(&path).unwrap();
    for record in reader.records() {
        let record = record.unwrap();
        let steps = &record[1];
        assert!(steps == "inf" || steps.parse::<u64>().is_ok());
    }
}

#[test]
fn sdf_grid_csv_has_full_resolution() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sdf_grid.csv");
    let points = qff_core::tasks::sdf::grid_points(GRID_RES);
    let n = points.len();
    let grid = SdfGrid {
        resolution: GRID_RES,
        points,
        pred: vec![0.0; n],
        truth: vec![0.5; n],
    };
    csvout::write_sdf_grid(&path, &grid).unwrap();
    let mut reader = csv::ReaderBuilder::new().from_path(&path).unwrap();
    assert_eq!(reader.records().count(), 32 * 32 * 32);
}

#[test]
fn checkpoint_survives_double_precision_models() {
    // f64 in memory, f32 on disk: a second save round-trips exactly.
    let enc = EncodingConfig::new(3, 2, 4, 2, Variant::Qff3d);
    let mlp = MlpConfig {
        input_width: enc.encoded_width(),
        hidden_width: 8,
        num_layers: 2,
        activation: Activation::Sine { omega: 30.0 },
        output_width: 1,
        output_transform: OutputTransform::None,
    };
    let model = FieldModel::<f64>::init(enc, mlp, 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p1 = dir.path().join("a.qff");
    let p2 = dir.path().join("b.qff");
    checkpoint::save_checkpoint(&p1, &model).unwrap();
    let loaded = checkpoint::load_checkpoint::<f64>(&p1).unwrap();
    checkpoint::save_checkpoint(&p2, &loaded).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
}
