//! Prompt construction and forecast extraction.
//!
//! The three prompt variants are built from the golden template files under
//! `templates/` (embedded at compile time); only the `<PRICE_LENGTH>`,
//! `<PRICE_VALUES>` and `<PREDICTION_INTERVAL>` placeholders are
//! substituted. The parser recovers a numeric forecast from free-form model
//! text and never panics on arbitrary input.

use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chart::{encode_png, ChartError, ChartImage};
use crate::data::ForecastSegment;

pub const TEXT_ONLY_TEMPLATE: &str = include_str!("../../../templates/text_only.txt");
pub const MULTIMODAL_TEMPLATE: &str = include_str!("../../../templates/multimodal.txt");
pub const COT_TEMPLATE: &str = include_str!("../../../templates/cot.txt");

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("mode {0} requires a chart image")]
    MissingImage(PromptMode),
    #[error("mode {0} does not take an image")]
    UnexpectedImage(PromptMode),
    #[error("no forecast found: fewer than {h} numbers in response")]
    NoForecastFound { h: usize, raw: String },
    #[error(transparent)]
    Chart(#[from] ChartError),
}

/// How the information is presented to the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    TextOnly,
    Multimodal,
    MultimodalCot,
}

impl PromptMode {
    pub const ALL: [PromptMode; 3] = [
        PromptMode::TextOnly,
        PromptMode::Multimodal,
        PromptMode::MultimodalCot,
    ];

    pub fn needs_image(&self) -> bool {
        !matches!(self, PromptMode::TextOnly)
    }

    pub fn template(&self) -> &'static str {
        match self {
            PromptMode::TextOnly => TEXT_ONLY_TEMPLATE,
            PromptMode::Multimodal => MULTIMODAL_TEMPLATE,
            PromptMode::MultimodalCot => COT_TEMPLATE,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            PromptMode::TextOnly => "text_only",
            PromptMode::Multimodal => "multimodal",
            PromptMode::MultimodalCot => "multimodal_cot",
        }
    }
}

impl fmt::Display for PromptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A rendered prompt: text plus the PNG image for image-bearing modes.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptBundle {
    pub mode: PromptMode,
    pub text: String,
    pub image: Option<Vec<u8>>,
    pub segment_ref: String,
}

/// Which extraction strategy produced a [`Forecast`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStrategy {
    BracketList,
    TrailingNumbers,
}

/// The h numeric predictions extracted from a model response.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    pub values: Vec<f64>,
    pub raw_response: String,
    pub parse_strategy: ParseStrategy,
}

/// Render values as `[v1, v2, ..., vn]` with exactly four decimal places.
pub fn format_values(values: &[f64]) -> String {
    format_values_with(values, 4)
}

/// Like [`format_values`] with a configurable decimal count.
pub fn format_values_with(values: &[f64], decimals: usize) -> String {
    let body: Vec<String> = values.iter().map(|v| format!("{v:.decimals$}")).collect();
    format!("[{}]", body.join(", "))
}

/// Substitute a segment into the template for `mode`.
///
/// `<PRICE_LENGTH>` becomes the input length, `<PRICE_VALUES>` the
/// formatted input values, `<PREDICTION_INTERVAL>` the horizon; nothing
/// else in the template changes.
pub fn build_prompt(
    mode: PromptMode,
    segment: &ForecastSegment,
    image: Option<&ChartImage>,
) -> Result<PromptBundle, PromptError> {
    build_prompt_with_decimals(mode, segment, image, 4)
}

pub fn build_prompt_with_decimals(
    mode: PromptMode,
    segment: &ForecastSegment,
    image: Option<&ChartImage>,
    decimals: usize,
) -> Result<PromptBundle, PromptError> {
    if mode.needs_image() && image.is_none() {
        return Err(PromptError::MissingImage(mode));
    }
    if !mode.needs_image() && image.is_some() {
        return Err(PromptError::UnexpectedImage(mode));
    }

    let text = mode
        .template()
        .replace("<PRICE_LENGTH>", &segment.input.len().to_string())
        .replace("<PRICE_VALUES>", &format_values_with(&segment.input, decimals))
        .replace("<PREDICTION_INTERVAL>", &segment.truth.len().to_string());

    let image = match image {
        Some(img) => Some(encode_png(img)?),
        None => None,
    };

    Ok(PromptBundle {
        mode,
        text,
        image,
        segment_ref: format!("start_{}", segment.start_index),
    })
}

fn number_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    // A number token must follow the start of text or a non-word,
    // non-digit, non-dot character, so literals glued to letters ("day1")
    // are ignored. Currency prefixes and thousands separators are accepted
    // and stripped.
    RE.get_or_init(|| {
        Regex::new(
            r"(?:^|[^A-Za-z0-9_.])([$€]?[-+]?(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d+)?(?:[eE][-+]?\d+)?)",
        )
        .expect("static regex")
    })
}

fn bracket_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\[[^\[\]]*\]").expect("static regex"))
}

/// All parseable numbers in `text`, in order of appearance.
fn extract_numbers(text: &str) -> Vec<f64> {
    number_regex()
        .captures_iter(text)
        .filter_map(|cap| {
            let tok: String = cap[1]
                .chars()
                .filter(|c| !matches!(c, '$' | '€' | ','))
                .collect();
            tok.parse::<f64>().ok().filter(|v| v.is_finite())
        })
        .collect()
}

/// Numbers of the first bracketed list in `text`, if any. Used by the
/// in-process mock models to recover the price window from a prompt.
pub(crate) fn first_bracket_numbers(text: &str) -> Option<Vec<f64>> {
    bracket_regex()
        .find_iter(text)
        .map(|g| extract_numbers(g.as_str()))
        .find(|nums| !nums.is_empty())
}

/// Extract an `h`-step forecast from free-form model text.
///
/// Strategy 1 (BracketList): of all bracketed lists containing at least
/// `h` numbers, take the last one and use its first `h` values — CoT
/// responses reason first and answer last. Strategy 2 (TrailingNumbers):
/// if at least `h` bare numbers appear anywhere, use the last `h`.
pub fn parse_forecast(raw: &str, h: usize) -> Result<Forecast, PromptError> {
    if h >= 1 {
        let mut last_hit: Option<Vec<f64>> = None;
        for group in bracket_regex().find_iter(raw) {
            let nums = extract_numbers(group.as_str());
            if nums.len() >= h {
                last_hit = Some(nums[..h].to_vec());
            }
        }
        if let Some(values) = last_hit {
            return Ok(Forecast {
                values,
                raw_response: raw.to_string(),
                parse_strategy: ParseStrategy::BracketList,
            });
        }

        let all = extract_numbers(raw);
        if all.len() >= h {
            return Ok(Forecast {
                values: all[all.len() - h..].to_vec(),
                raw_response: raw.to_string(),
                parse_strategy: ParseStrategy::TrailingNumbers,
            });
        }
    }

    Err(PromptError::NoForecastFound {
        h,
        raw: raw.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chart::render_line_chart;
    use proptest::prelude::*;

    fn segment(t: usize, h: usize) -> ForecastSegment {
        ForecastSegment {
            input: (0..t).map(|i| i as f64 / (t - 1) as f64).collect(),
            truth: vec![0.5; h],
            start_index: 0,
            scale: (1.0, 2.0),
        }
    }

    #[test]
    fn format_values_examples() {
        assert_eq!(format_values(&[0.5]), "[0.5000]");
        assert_eq!(format_values(&[0.0, 1.0]), "[0.0000, 1.0000]");
        assert_eq!(format_values(&[0.123456]), "[0.1235]");
    }

    #[test]
    fn text_only_prompt_starts_as_expected() {
        let seg = segment(100, 5);
        let bundle = build_prompt(PromptMode::TextOnly, &seg, None).unwrap();
        assert!(bundle
            .text
            .starts_with("These are the time-series values of a stock over the first 100 days:"));
        assert!(bundle.text.contains("next 5 days"));
        assert!(bundle.image.is_none());
    }

    #[test]
    fn cot_prompt_contains_instruction() {
        let seg = segment(100, 5);
        let img = render_line_chart(&seg.input, 128, 64).unwrap();
        let bundle = build_prompt(PromptMode::MultimodalCot, &seg, Some(&img)).unwrap();
        assert!(bundle
            .text
            .contains("ignore external factors like news or market sentiment"));
        assert!(bundle.image.is_some());
    }

    #[test]
    fn image_presence_is_enforced() {
        let seg = segment(10, 2);
        assert!(matches!(
            build_prompt(PromptMode::Multimodal, &seg, None),
            Err(PromptError::MissingImage(_))
        ));
        let img = render_line_chart(&seg.input, 128, 64).unwrap();
        assert!(matches!(
            build_prompt(PromptMode::TextOnly, &seg, Some(&img)),
            Err(PromptError::UnexpectedImage(_))
        ));
    }

    #[test]
    fn templates_differ_only_at_placeholder_sites() {
        // Substituting fresh markers back in must reproduce the template.
        for mode in PromptMode::ALL {
            let seg = segment(12, 3);
            let image;
            let img_ref = if mode.needs_image() {
                image = render_line_chart(&seg.input, 128, 64).unwrap();
                Some(&image)
            } else {
                None
            };
            let bundle = build_prompt(mode, &seg, img_ref).unwrap();
            let expected = mode
                .template()
                .replace("<PRICE_LENGTH>", "12")
                .replace("<PRICE_VALUES>", &format_values(&seg.input))
                .replace("<PREDICTION_INTERVAL>", "3");
            assert_eq!(bundle.text, expected);
        }
    }

    #[test]
    fn parse_simple_bracket_list() {
        let f = parse_forecast("[101, 100]", 2).unwrap();
        assert_eq!(f.values, vec![101.0, 100.0]);
        assert_eq!(f.parse_strategy, ParseStrategy::BracketList);
    }

    #[test]
    fn parse_prefers_bracket_list_over_prose_numbers() {
        let raw = "The trend is fluctuating around 101. Prediction: [0.5012, 0.5020, 0.5018, 0.5031, 0.5025]";
        let f = parse_forecast(raw, 5).unwrap();
        assert_eq!(f.values, vec![0.5012, 0.5020, 0.5018, 0.5031, 0.5025]);
        assert_eq!(f.parse_strategy, ParseStrategy::BracketList);
    }

    #[test]
    fn parse_refusal_is_an_error() {
        let err = parse_forecast("I cannot predict stock prices.", 5).unwrap_err();
        match err {
            PromptError::NoForecastFound { h, raw } => {
                assert_eq!(h, 5);
                assert!(raw.contains("cannot predict"));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn parse_takes_last_qualifying_list() {
        let raw = "Input was [1, 2, 3, 4, 5, 6]; I predict [7, 8].";
        let f = parse_forecast(raw, 2).unwrap();
        assert_eq!(f.values, vec![7.0, 8.0]);
    }

    #[test]
    fn parse_uses_first_h_of_long_list() {
        let f = parse_forecast("[1, 2, 3, 4, 5, 6, 7]", 5).unwrap();
        assert_eq!(f.values, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn parse_strips_currency_and_thousands() {
        let f = parse_forecast("[$101.50, €102.00]", 2).unwrap();
        assert_eq!(f.values, vec![101.5, 102.0]);
        let f = parse_forecast("around $1,234.56 then $1,240.00", 2).unwrap();
        assert_eq!(f.values, vec![1234.56, 1240.0]);
    }

    #[test]
    fn parse_ignores_letter_glued_digits() {
        let f = parse_forecast("day1: 100, day2: 101", 2).unwrap();
        assert_eq!(f.values, vec![100.0, 101.0]);
        assert_eq!(f.parse_strategy, ParseStrategy::TrailingNumbers);
    }

    #[test]
    fn parse_falls_back_to_trailing_numbers() {
        let f = parse_forecast("[1, 2] and also 3 4 5", 5).unwrap();
        assert_eq!(f.values, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(f.parse_strategy, ParseStrategy::TrailingNumbers);
    }

    #[test]
    fn parse_roundtrips_formatted_values() {
        let v = vec![0.1234, 0.5678, 0.9012];
        let f = parse_forecast(&format_values(&v), 3).unwrap();
        assert_eq!(f.values, v);
    }

    proptest! {
        #[test]
        fn parser_total_on_arbitrary_strings(raw in ".{0,200}", h in 1usize..8) {
            let _ = parse_forecast(&raw, h);
        }

        #[test]
        fn parser_roundtrip_within_rounding(values in proptest::collection::vec(0.0f64..2.0, 1..8)) {
            let text = format_values(&values);
            let parsed = parse_forecast(&text, values.len()).unwrap();
            for (orig, got) in values.iter().zip(&parsed.values) {
                prop_assert!((orig - got).abs() <= 5e-5);
            }
        }
    }
}
