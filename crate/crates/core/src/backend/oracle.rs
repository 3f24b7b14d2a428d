//! Scripted pixel-reading oracle for synthetic bar charts.
//!
//! The oracle sees the image and the chart geometry (bar column ranges,
//! baseline, scale), never the rendered values. A bar's top is the first row,
//! scanning down from the plot top, where at least half of the bar's inner
//! columns hold saturated ("ink") pixels. Noise and blur rarely move that row;
//! occlusion and rotation do.

use super::{Backend, BackendError, ModelRequest, ModelResponse};
use crate::dataset::{ChartLayout, ChartTask, QuestionRecord, RenderSchema, BAR_CHART_SCHEMA};
use crate::image::Image;

const INK_SATURATION: i32 = 80;
const EDGE_INSET: u32 = 2;

fn is_ink(px: [u8; 3]) -> bool {
    let max = px.iter().copied().max().unwrap() as i32;
    let min = px.iter().copied().min().unwrap() as i32;
    max - min >= INK_SATURATION
}

/// Measured bar height in pixels.
fn bar_height(img: &Image, layout: &ChartLayout, bar: usize) -> u32 {
    let slot = &layout.bars[bar];
    let x0 = (slot.x0 + EDGE_INSET).min(img.width());
    let x1 = slot.x1.saturating_sub(EDGE_INSET).min(img.width()).max(x0);
    let cols = (x1 - x0).max(1);
    let bottom = layout.baseline_y.min(img.height());
    for y in layout.plot_top_y.min(bottom)..bottom {
        let ink = (x0..x1).filter(|&x| is_ink(img.get(x, y))).count() as u32;
        if 2 * ink >= cols && ink > 0 {
            return layout.baseline_y - y;
        }
    }
    0
}

/// Height rounded to the nearest value step.
fn bar_value(img: &Image, layout: &ChartLayout, bar: usize) -> u32 {
    let unit = layout.px_per_unit.max(1) * layout.value_step.max(1);
    let h = bar_height(img, layout, bar);
    (h + unit / 2) / unit * layout.value_step.max(1)
}

/// Raw answer text (`"Answer: ..."`) for a synthetic question.
pub fn oracle_answer(img: &Image, schema: &RenderSchema) -> Result<String, BackendError> {
    if schema.schema != BAR_CHART_SCHEMA {
        return Err(BackendError::Unsupported(format!("unknown render schema {:?}", schema.schema)));
    }
    let layout = &schema.layout;
    let n = layout.bars.len();
    let check = |i: usize| {
        if i < n {
            Ok(i)
        } else {
            Err(BackendError::Unsupported(format!("bar {i} out of range ({n} bars)")))
        }
    };
    if n == 0 {
        return Err(BackendError::Unsupported("chart has no bars".into()));
    }
    let answer = match schema.task {
        ChartTask::TallestBar => {
            let mut best = (0, 0);
            for i in 0..n {
                let h = bar_height(img, layout, i);
                if h > best.1 {
                    best = (i, h);
                }
            }
            layout.bars[best.0].label.clone()
        }
        ChartTask::ValueOfBar { bar } => bar_value(img, layout, check(bar)?).to_string(),
        ChartTask::TallerThan { a, b } => {
            let (ha, hb) = (bar_height(img, layout, check(a)?), bar_height(img, layout, check(b)?));
            if ha > hb { "yes" } else { "no" }.to_string()
        }
    };
    Ok(format!("Answer: {answer}"))
}

pub fn scripted_oracle_infer(img: &Image, question: &QuestionRecord) -> Result<String, BackendError> {
    let schema = question
        .render_schema
        .as_ref()
        .ok_or_else(|| BackendError::Unsupported(format!("{} carries no render schema", question.id)))?;
    oracle_answer(img, schema)
}

/// Backend wrapper; the self-correction call re-reads the image it is given.
pub struct OracleBackend {
    name: String,
}

impl OracleBackend {
    pub fn new() -> Self {
        Self {
            name: "scripted-oracle".to_string(),
        }
    }
}

impl Default for OracleBackend {
    fn default() -> Self {
        Self::new()
    }
}

impl Backend for OracleBackend {
    fn model_name(&self) -> &str {
        &self.name
    }

    fn infer(&self, req: &ModelRequest) -> Result<ModelResponse, BackendError> {
        let schema = req
            .render_schema
            .as_ref()
            .ok_or_else(|| BackendError::Unsupported(format!("{} carries no render schema", req.question_id)))?;
        oracle_answer(&req.image, schema).map(ModelResponse::local)
    }
}
