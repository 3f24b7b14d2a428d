//! Desk-scale bar-chart suite with ground truth computed from the render.
//!
//! Charts are 256x256: white background, black axes, 3-5 solid bars with
//! distinct heights (multiples of 10 pixels, so any two differ by at least
//! 10 px) and A-E labels under the x axis.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::glyphs::{draw_glyph, GLYPH_H, GLYPH_W};
use super::{io_err, write_manifest, DatasetError, Domain, QuestionRecord};
use crate::amcv::AnswerType;
use crate::image::{encode_png, Image, BLACK, WHITE};
use crate::rng::derive_stream;

pub const BAR_CHART_SCHEMA: &str = "bar_chart_v1";
pub const SYNTH_MANIFEST_FILE: &str = "questions.jsonl";

const CANVAS: u32 = 256;
const BASELINE_Y: u32 = 224;
const PLOT_TOP_Y: u32 = 16;
const PLOT_X0: u32 = 32;
const PLOT_X1: u32 = 248;
const VALUE_STEP: u32 = 10;
const MIN_VALUE: u32 = 20;
const MAX_VALUE: u32 = 190;
const LABEL_SCALE: u32 = 2;
const LABEL_Y: u32 = BASELINE_Y + 6;
const _: () = assert!(LABEL_Y + GLYPH_H * LABEL_SCALE <= CANVAS);

const BAR_COLORS: [[u8; 3]; 5] = [
    [220, 30, 30],
    [30, 60, 220],
    [30, 160, 50],
    [230, 130, 20],
    [140, 40, 170],
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BarSlot {
    pub label: String,
    /// Half-open column range `[x0, x1)` painted by the bar.
    pub x0: u32,
    pub x1: u32,
}

/// Geometry needed to read values back off the canvas.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChartLayout {
    pub canvas: u32,
    /// First row below the bars; bars occupy `[baseline_y - value * px_per_unit, baseline_y)`.
    pub baseline_y: u32,
    pub plot_top_y: u32,
    pub px_per_unit: u32,
    /// Values are multiples of this.
    pub value_step: u32,
    pub bars: Vec<BarSlot>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum ChartTask {
    TallestBar,
    ValueOfBar { bar: usize },
    TallerThan { a: usize, b: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderSchema {
    pub schema: String,
    pub layout: ChartLayout,
    pub task: ChartTask,
    /// Rendered bar values. Ground truth derives from these; readers of the
    /// image should rely on `layout` only.
    pub values: Vec<u32>,
}

fn label(i: usize) -> String {
    ((b'A' + i as u8) as char).to_string()
}

/// Renders a bar chart for `values` (one bar per value, at most five).
pub fn synth_render(values: &[u32]) -> (Image, ChartLayout) {
    assert!((1..=5).contains(&values.len()), "1-5 bars supported");
    let mut img = Image::filled(CANVAS, CANVAS, WHITE).expect("fixed canvas");
    let n = values.len() as u32;
    let slot = (PLOT_X1 - PLOT_X0) / n;
    let bar_w = slot * 3 / 5;

    let mut bars = Vec::with_capacity(values.len());
    for (i, &v) in values.iter().enumerate() {
        let x0 = PLOT_X0 + i as u32 * slot + (slot - bar_w) / 2;
        let x1 = x0 + bar_w;
        img.fill_rect(x0, BASELINE_Y - v, x1, BASELINE_Y, BAR_COLORS[i % BAR_COLORS.len()]);
        let lx = (x0 + x1) / 2 - GLYPH_W * LABEL_SCALE / 2;
        draw_glyph(&mut img, (b'A' + i as u8) as char, lx, LABEL_Y, LABEL_SCALE, BLACK);
        bars.push(BarSlot { label: label(i), x0, x1 });
    }
    // Axes drawn last so they sit on top of bar edges.
    img.fill_rect(PLOT_X0 - 8, PLOT_TOP_Y, PLOT_X0 - 6, BASELINE_Y + 2, BLACK);
    img.fill_rect(PLOT_X0 - 8, BASELINE_Y, PLOT_X1, BASELINE_Y + 2, BLACK);

    let layout = ChartLayout {
        canvas: CANVAS,
        baseline_y: BASELINE_Y,
        plot_top_y: PLOT_TOP_Y,
        px_per_unit: 1,
        value_step: VALUE_STEP,
        bars,
    };
    (img, layout)
}

/// Ground truth as a canonical answer string.
pub fn ground_truth_for(task: &ChartTask, values: &[u32]) -> String {
    match *task {
        ChartTask::TallestBar => {
            let (idx, _) = values
                .iter()
                .enumerate()
                .fold((0, 0), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
            label(idx)
        }
        ChartTask::ValueOfBar { bar } => values[bar].to_string(),
        ChartTask::TallerThan { a, b } => if values[a] > values[b] { "yes" } else { "no" }.to_string(),
    }
}

/// Generates `count` charts and questions under `out_dir`: `images/<id>.png`
/// plus a `questions.jsonl` manifest with image paths relative to `out_dir`.
pub fn synth_generate(count: usize, master_seed: u64, out_dir: &Path) -> Result<Vec<QuestionRecord>, DatasetError> {
    let images = out_dir.join("images");
    fs::create_dir_all(&images).map_err(io_err(&images))?;

    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let id = format!("synth-{i:04}");
        let mut rng = derive_stream(master_seed, &id, 0);

        let n_bars = 3 + rng.below(3) as usize;
        let mut pool: Vec<u32> = (MIN_VALUE..=MAX_VALUE).step_by(VALUE_STEP as usize).collect();
        rng.shuffle(&mut pool);
        let values: Vec<u32> = pool[..n_bars].to_vec();

        let (img, layout) = synth_render(&values);
        let (task, answer_type, text, choices) = match i % 3 {
            0 => (
                ChartTask::TallestBar,
                AnswerType::MultipleChoice,
                "Which bar in the chart is the tallest?".to_string(),
                Some((0..n_bars).map(|b| format!("Bar {}", label(b))).collect::<Vec<_>>()),
            ),
            1 => {
                let bar = rng.below(n_bars as u64) as usize;
                (
                    ChartTask::ValueOfBar { bar },
                    AnswerType::FillInBlank,
                    format!("The value of bar {} is ____.", label(bar)),
                    None,
                )
            }
            _ => {
                let a = rng.below(n_bars as u64) as usize;
                let b = (a + 1 + rng.below(n_bars as u64 - 1) as usize) % n_bars;
                (
                    ChartTask::TallerThan { a, b },
                    AnswerType::ShortAnswer,
                    format!("Is bar {} taller than bar {}?", label(a), label(b)),
                    None,
                )
            }
        };

        let rel: PathBuf = Path::new("images").join(format!("{id}.png"));
        let png = encode_png(&img).map_err(|e| DatasetError::Image(id.clone(), e))?;
        let abs = out_dir.join(&rel);
        fs::write(&abs, png).map_err(io_err(&abs))?;

        records.push(QuestionRecord {
            ground_truth: ground_truth_for(&task, &values),
            id,
            image_path: rel,
            question_text: text,
            answer_type,
            choices,
            domain: Domain::ALL[i % Domain::ALL.len()],
            subtopic: "bar-chart-reading".to_string(),
            render_schema: Some(RenderSchema {
                schema: BAR_CHART_SCHEMA.to_string(),
                layout,
                task,
                values,
            }),
        });
    }
    write_manifest(&out_dir.join(SYNTH_MANIFEST_FILE), &records)?;
    Ok(records)
}
