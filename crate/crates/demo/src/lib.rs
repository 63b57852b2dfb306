//! Browser bindings: the attention cost table, the frame samplers and the
//! synthetic clip renderer. Each export wraps a plain function that the
//! native tests call directly.

use crossframe::cost::{CostReport, CostShape, Instrument};
use crossframe::data::{render_clip, ClipSpec, SamplingMode, SynthClass, SynthSpec};
use wasm_bindgen::prelude::*;

/// Cost report CSV for frame counts `frames` (comma separated). Analytic only;
/// instrumented forwards at this width would stall the page.
pub fn cost_csv(
    frames: &str,
    patches: usize,
    dim: usize,
    heads: usize,
    layers: usize,
) -> Result<String, String> {
    let counts = frames
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| format!("bad frame count `{}`", s.trim()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let base = CostShape {
        frames: 1,
        patches,
        dim,
        heads,
        layers,
    };
    let report = CostReport::build(&base, &counts, Instrument::Off).map_err(|e| e.to_string())?;
    let mut out = Vec::new();
    report.write_csv(&mut out).map_err(|e| e.to_string())?;
    String::from_utf8(out).map_err(|e| e.to_string())
}

pub fn sample(
    source: usize,
    frames: usize,
    stride: usize,
    deterministic: bool,
    seed: u64,
) -> Result<Vec<u32>, String> {
    let mode = if stride == 0 {
        SamplingMode::Sparse
    } else {
        SamplingMode::Dense { stride }
    };
    let spec = ClipSpec {
        source_frames: source,
        frames,
        mode,
        deterministic,
        seed,
    };
    let idx = spec.sample().map_err(|e| e.to_string())?;
    Ok(idx.into_iter().map(|i| i as u32).collect())
}

/// RGBA bytes of every frame, frame-major, `size × size` each.
pub fn render(
    class_id: usize,
    index: usize,
    seed: u64,
    frames: usize,
    size: usize,
) -> Result<Vec<u8>, String> {
    let class = SynthClass::from_id(class_id).map_err(|e| e.to_string())?;
    let spec = SynthSpec {
        frames,
        height: size,
        width: size,
    };
    let clip = render_clip(&spec, class, index, seed).map_err(|e| e.to_string())?;
    let mut out = Vec::with_capacity(frames * size * size * 4);
    for f in &clip.frames {
        for px in f.data.chunks_exact(3) {
            out.extend(px.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
            out.push(255);
        }
    }
    Ok(out)
}

pub fn label(class_id: usize) -> Result<String, String> {
    SynthClass::from_id(class_id)
        .map(|c| c.label())
        .map_err(|e| e.to_string())
}

#[wasm_bindgen(js_name = costCsv)]
pub fn cost_csv_js(
    frames: &str,
    patches: usize,
    dim: usize,
    heads: usize,
    layers: usize,
) -> Result<String, JsError> {
    cost_csv(frames, patches, dim, heads, layers).map_err(|e| JsError::new(&e))
}

/// `stride` 0 selects sparse sampling.
#[wasm_bindgen(js_name = sampleIndices)]
pub fn sample_js(
    source: usize,
    frames: usize,
    stride: usize,
    deterministic: bool,
    seed: u32,
) -> Result<Vec<u32>, JsError> {
    sample(source, frames, stride, deterministic, seed as u64).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = renderClip)]
pub fn render_js(
    class_id: usize,
    index: usize,
    seed: u32,
    frames: usize,
    size: usize,
) -> Result<Vec<u8>, JsError> {
    render(class_id, index, seed as u64, frames, size).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = classLabel)]
pub fn label_js(class_id: usize) -> Result<String, JsError> {
    label(class_id).map_err(|e| JsError::new(&e))
}
