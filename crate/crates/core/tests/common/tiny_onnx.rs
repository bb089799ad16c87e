//! Hand-built ONNX graphs with the same inputs and outputs as an exported
//! encoder bundle, plus plain-loop reference math for their outputs.
//!
//! Image graph: GlobalAveragePool → Flatten → MatMul (3×768) gives
//! `features_768`, then MatMul (768×512) gives `embed_512`.
//! Text graph: Cast(int64 → float) → MatMul (77×512) gives `embed_512`.

#![allow(dead_code)]

use std::path::Path;

use prost::Message;
use tract_onnx::pb::{
    attribute_proto::AttributeType, tensor_proto::DataType, tensor_shape_proto, type_proto,
    AttributeProto, GraphProto, ModelProto, NodeProto, OperatorSetIdProto, TensorProto,
    TensorShapeProto, TypeProto, ValueInfoProto,
};

pub const CONTEXT: usize = 77;
pub const SIDE: usize = 224;

pub fn w_feature() -> Vec<f32> {
    (0..3 * 768)
        .map(|i| ((i * 37 % 101) as f32 / 101.0 - 0.5) * 2.0)
        .collect()
}

pub fn w_embed() -> Vec<f32> {
    (0..768 * 512)
        .map(|i| ((i * 53 % 97) as f32 / 97.0 - 0.5) * 0.1)
        .collect()
}

pub fn w_text() -> Vec<f32> {
    (0..CONTEXT * 512)
        .map(|i| ((i * 29 % 89) as f32 / 89.0 - 0.5) * 0.02)
        .collect()
}

fn value_info(name: &str, elem: DataType, dims: &[i64]) -> ValueInfoProto {
    let dim = dims
        .iter()
        .map(|&d| tensor_shape_proto::Dimension {
            value: Some(tensor_shape_proto::dimension::Value::DimValue(d)),
            ..Default::default()
        })
        .collect();
    ValueInfoProto {
        name: name.into(),
        r#type: Some(TypeProto {
            value: Some(type_proto::Value::TensorType(type_proto::Tensor {
                elem_type: elem as i32,
                shape: Some(TensorShapeProto { dim }),
            })),
            ..Default::default()
        }),
        ..Default::default()
    }
}

fn float_tensor(name: &str, dims: &[i64], data: Vec<f32>) -> TensorProto {
    TensorProto {
        name: name.into(),
        dims: dims.to_vec(),
        data_type: DataType::Float as i32,
        float_data: data,
        ..Default::default()
    }
}

fn node(op: &str, inputs: &[&str], output: &str, attribute: Vec<AttributeProto>) -> NodeProto {
    NodeProto {
        op_type: op.into(),
        name: output.into(),
        input: inputs.iter().map(|s| s.to_string()).collect(),
        output: vec![output.into()],
        attribute,
        ..Default::default()
    }
}

fn int_attr(name: &str, value: i64) -> AttributeProto {
    AttributeProto {
        name: name.into(),
        r#type: AttributeType::Int as i32,
        i: value,
        ..Default::default()
    }
}

fn model(graph: GraphProto) -> Vec<u8> {
    ModelProto {
        ir_version: 7,
        opset_import: vec![OperatorSetIdProto {
            domain: String::new(),
            version: 13,
        }],
        producer_name: "mobmod-tests".into(),
        graph: Some(graph),
        ..Default::default()
    }
    .encode_to_vec()
}

pub fn image_model() -> Vec<u8> {
    let side = SIDE as i64;
    model(GraphProto {
        name: "image".into(),
        node: vec![
            node("GlobalAveragePool", &["pixels"], "pooled", vec![]),
            node("Flatten", &["pooled"], "flat", vec![int_attr("axis", 1)]),
            node("MatMul", &["flat", "w_feature"], "features_768", vec![]),
            node("MatMul", &["features_768", "w_embed"], "embed_512", vec![]),
        ],
        initializer: vec![
            float_tensor("w_feature", &[3, 768], w_feature()),
            float_tensor("w_embed", &[768, 512], w_embed()),
        ],
        input: vec![value_info("pixels", DataType::Float, &[1, 3, side, side])],
        output: vec![
            value_info("features_768", DataType::Float, &[1, 768]),
            value_info("embed_512", DataType::Float, &[1, 512]),
        ],
        ..Default::default()
    })
}

pub fn text_model() -> Vec<u8> {
    model(GraphProto {
        name: "text".into(),
        node: vec![
            node("Cast", &["ids"], "ids_f", vec![int_attr("to", DataType::Float as i64)]),
            node("MatMul", &["ids_f", "w_text"], "embed_512", vec![]),
        ],
        initializer: vec![float_tensor("w_text", &[CONTEXT as i64, 512], w_text())],
        input: vec![value_info("ids", DataType::Int64, &[1, CONTEXT as i64])],
        output: vec![value_info("embed_512", DataType::Float, &[1, 512])],
        ..Default::default()
    })
}

pub fn write_models(image: &Path, text: &Path) {
    std::fs::write(image, image_model()).unwrap();
    std::fs::write(text, text_model()).unwrap();
}

fn matvec(x: &[f64], w: &[f32], cols: usize) -> Vec<f64> {
    let mut out = vec![0f64; cols];
    for (r, xr) in x.iter().enumerate() {
        for c in 0..cols {
            out[c] += xr * w[r * cols + c] as f64;
        }
    }
    out
}

/// Expected (features_768, embed_512) for a 3×224×224 input.
pub fn expected_image(pixels: &[f32]) -> (Vec<f64>, Vec<f64>) {
    let plane = SIDE * SIDE;
    let means: Vec<f64> = (0..3)
        .map(|c| pixels[c * plane..(c + 1) * plane].iter().map(|&v| v as f64).sum::<f64>() / plane as f64)
        .collect();
    let feat = matvec(&means, &w_feature(), 768);
    let embed = matvec(&feat, &w_embed(), 512);
    (feat, embed)
}

pub fn expected_text(ids: &[i64]) -> Vec<f64> {
    let x: Vec<f64> = ids.iter().map(|&i| i as f64).collect();
    matvec(&x, &w_text(), 512)
}

pub const PARITY_PROMPTS: [&str; 2] = ["a photo of a malicious.", "a cartoon of a benign."];

/// Character vocabulary: `<sot>`, `<eot>`, `<pad>`, then printable ASCII.
pub fn char_vocab_lines() -> String {
    let mut out = String::from("<sot>\n<eot>\n<pad>\n");
    for b in 0x21u8..=0x7e {
        out.push(b as char);
        out.push('\n');
    }
    out
}

/// Ids under [`char_vocab_lines`] for lowercase ASCII text.
pub fn char_ids(text: &str) -> Vec<i64> {
    let mut ids = vec![0i64];
    ids.extend(
        text.bytes()
            .filter(|b| !b.is_ascii_whitespace())
            .map(|b| 3 + (b - 0x21) as i64),
    );
    ids.push(1);
    ids.resize(CONTEXT, 2);
    ids
}

pub fn parity_image(i: usize) -> Vec<f32> {
    (0..3 * SIDE * SIDE)
        .map(|k| ((k * (i + 5)) % 23) as f32 / 11.0 - 1.0)
        .collect()
}

/// Write models, vocabulary, merges and a parity file whose expected values
/// come from the plain-loop math above. `skew` is added to every expected
/// text embedding value.
pub fn write_bundle(dir: &Path, skew: f32) {
    use mobmod_core::parity::{
        write_parity, ImageCase, ParityCases, TextCase, IMAGE_MODEL_FILE, MERGES_FILE,
        PARITY_FILE, TEXT_MODEL_FILE, VOCAB_FILE,
    };
    write_models(&dir.join(IMAGE_MODEL_FILE), &dir.join(TEXT_MODEL_FILE));
    std::fs::write(dir.join(VOCAB_FILE), char_vocab_lines()).unwrap();
    std::fs::write(dir.join(MERGES_FILE), "#version: 0.2\n").unwrap();
    let to_f32 = |v: Vec<f64>| v.into_iter().map(|x| x as f32).collect::<Vec<_>>();
    let images = (0..2)
        .map(|i| {
            let input = parity_image(i);
            let (f, e) = expected_image(&input);
            ImageCase {
                input,
                features: to_f32(f),
                embed: to_f32(e),
            }
        })
        .collect();
    let texts = PARITY_PROMPTS
        .iter()
        .map(|t| {
            let ids = char_ids(t);
            let embed = expected_text(&ids).into_iter().map(|x| x as f32 + skew).collect();
            TextCase {
                text: t.to_string(),
                ids,
                embed,
            }
        })
        .collect();
    let cases = ParityCases {
        context_length: CONTEXT,
        images,
        texts,
    };
    write_parity(&dir.join(PARITY_FILE), &cases).unwrap();
}
