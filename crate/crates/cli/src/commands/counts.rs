//! `cmsc count-params`: learnable-parameter breakdown from the network
//! description alone, with the multi-scale vs single-scale convolution
//! weight ratio when it applies.

use cmsc::analysis::{conv_weight_counts, count_params};
use cmsc::error::Result;
use cmsc::net::{preset, PresetName, WidthProfile};

use crate::cli::CountParamsArgs;
use crate::commands::{parse_input_shape, resolve_spec};

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

pub fn run(args: &CountParamsArgs) -> Result<i32> {
    let input_shape = parse_input_shape(&args.input_shape)?;
    let (spec, desc) = resolve_spec(&args.net, input_shape, args.classes)?;
    let count = count_params(&spec)?;
    let conv_weights = conv_weight_counts(&spec)?;

    // When the multi-scale/single-scale pair is involved, report the exact
    // first-module convolution-weight ratio between the two at these widths.
    let ratio = match args.net.preset.as_deref() {
        Some(name @ ("competitive-multiscale" | "competitive-singlescale"
        | "competitive-dropconnect")) => {
            let profile = WidthProfile::parse(&args.net.width_profile)?;
            let ms = preset(
                PresetName::CompetitiveMultiscale,
                &profile,
                input_shape,
                args.classes,
            )?;
            let ss = preset(
                PresetName::CompetitiveSinglescale,
                &profile,
                input_shape,
                args.classes,
            )?;
            let (a, b) = (
                conv_weight_counts(&ms)?[0],
                conv_weight_counts(&ss)?[0],
            );
            let g = gcd(a, b);
            Some(serde_json::json!({
                "compared": [name, "competitive-singlescale"],
                "module0_conv_weights_multiscale": a,
                "module0_conv_weights_singlescale": b,
                "ratio": format!("{}/{}", a / g, b / g),
            }))
        }
        _ => None,
    };

    if args.json {
        let body = serde_json::json!({
            "network": desc,
            "total_params": count.total,
            "per_module": count
                .per_module()
                .iter()
                .map(|(m, c)| serde_json::json!({"module": m, "params": c}))
                .collect::<Vec<_>>(),
            "per_layer": if args.per_layer {
                Some(
                    count
                        .rows
                        .iter()
                        .map(|r| serde_json::json!({"path": r.path, "params": r.params}))
                        .collect::<Vec<_>>(),
                )
            } else {
                None
            },
            "module_conv_weights": conv_weights,
            "multiscale_vs_singlescale": ratio,
        });
        println!("{}", serde_json::to_string_pretty(&body).expect("json"));
        return Ok(0);
    }

    println!("network: {desc}");
    println!("total learnable parameters: {}", count.total);
    println!("\nper module:");
    for (module, params) in count.per_module() {
        println!("  {module:<10} {params:>10}");
    }
    if args.per_layer {
        println!("\nper layer:");
        for row in &count.rows {
            println!("  {:<28} {:>10}", row.path, row.params);
        }
    }
    println!("\nmodule conv weights (no biases): {conv_weights:?}");
    if let Some(r) = ratio {
        println!(
            "multi-scale vs single-scale module-0 conv weights: {} vs {} (ratio {})",
            r["module0_conv_weights_multiscale"],
            r["module0_conv_weights_singlescale"],
            r["ratio"].as_str().unwrap_or("?")
        );
    }
    Ok(0)
}
