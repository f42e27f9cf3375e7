//! `cmsc masks`: the deterministic center-mask table for a filter-size
//! family and the DropConnect rate that drops as many weights on average.

use cmsc::analysis::{dropconnect_rate_for, make_center_mask};
use cmsc::error::{Error, Result};

use crate::cli::MasksArgs;

pub fn run(args: &MasksArgs) -> Result<i32> {
    let sizes: Vec<usize> = args
        .sizes
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("bad --sizes '{}'", args.sizes)))?;
    let rate = dropconnect_rate_for(&sizes)?;
    let frame = *sizes.iter().max().unwrap();

    let mut rows = Vec::new();
    for &k in &sizes {
        let mask = make_center_mask(frame, k)?;
        rows.push((k, mask.ones(), mask.zeros()));
    }

    if args.json {
        let body = serde_json::json!({
            "frame": frame,
            "masks": rows
                .iter()
                .map(|(k, kept, dropped)| serde_json::json!({
                    "size": k, "kept": kept, "dropped": dropped,
                }))
                .collect::<Vec<_>>(),
            "dropped_total": rate.dropped,
            "weight_total": rate.total,
            "equivalent_dropconnect_rate": rate.value(),
        });
        println!("{}", serde_json::to_string_pretty(&body).expect("json"));
        return Ok(0);
    }

    println!("frame {frame}x{frame}:");
    for (k, kept, dropped) in rows {
        println!("  {k}x{k}: {kept} kept, {dropped} border weights dropped");
    }
    println!(
        "equivalent DropConnect rate: {}/{} = {:.4}",
        rate.dropped,
        rate.total,
        rate.value()
    );
    Ok(0)
}
