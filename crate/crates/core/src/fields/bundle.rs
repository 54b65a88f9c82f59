use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{BackgroundField, EvalMode, ModelConfig, SourceField, TargetField, TargetView};

/// Parameters of the background, source and target renderers.
#[derive(Debug, Clone)]
pub struct FieldBundle {
    pub config: ModelConfig,
    pub background: BackgroundField,
    pub source: SourceField,
    pub target: TargetField,
}

/// Which part of a bundle a parameter block belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Background,
    Source,
    Target,
}

impl FieldBundle {
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let background = BackgroundField::new(&config, &mut rng);
        let source = SourceField::new(&config, &mut rng);
        let target = TargetField::new(&config, &source, &mut rng);
        Self {
            config,
            background,
            source,
            target,
        }
    }

    /// Re-creates the target as a zero residual on the current source.
    pub fn reset_target(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.target = TargetField::new(&self.config, &self.source, &mut rng);
    }

    pub fn target_view(&self) -> TargetView<'_> {
        TargetView::new(&self.source, &self.target)
    }

    /// Source signed distance and geometric feature at `x`.
    pub fn sdf_source(&self, x: &[f64; 3]) -> (f64, Vec<f64>) {
        let (o, _) = self.source.eval(x, &[0.0, 0.0, 1.0], EvalMode::SdfOnly);
        (o.sdf, o.feature)
    }

    /// Target signed distance and geometric feature at `x`.
    pub fn sdf_target(&self, x: &[f64; 3]) -> (f64, Vec<f64>) {
        let (src, _) = self.source.eval(x, &[0.0, 0.0, 1.0], EvalMode::SdfOnly);
        self.target.sdf_feature(&src, x)
    }

    /// All parameter blocks in checkpoint order.
    pub fn blocks(&self) -> Vec<(&'static str, &[f64])> {
        let mut b = self.background.blocks();
        b.extend(self.source.blocks());
        b.extend(self.target.blocks());
        b
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut b = self.background.blocks_mut();
        b.extend(self.source.blocks_mut());
        b.extend(self.target.blocks_mut());
        b
    }

    pub fn part_of(name: &str) -> Part {
        match name.split('.').next() {
            Some("bg") => Part::Background,
            Some("src") => Part::Source,
            _ => Part::Target,
        }
    }

    /// SHA-256 over the raw bytes of every block belonging to `part`.
    pub fn checksum(&self, part: Part) -> String {
        let mut h = Sha256::new();
        for (name, block) in self.blocks() {
            if Self::part_of(name) == part {
                h.update(name.as_bytes());
                for v in block {
                    h.update(v.to_le_bytes());
                }
            }
        }
        hex::encode(h.finalize())
    }

    /// Parameter counts of (background, source, target).
    pub fn param_counts(&self) -> (usize, usize, usize) {
        (
            self.background.num_params(),
            self.source.num_params(),
            self.target.num_params(),
        )
    }

    /// Sets the progressive level count of the source and background encoders.
    pub fn set_identity_levels(&mut self, fg: usize, bg: usize) {
        self.source.encoding_mut().set_active_levels(fg);
        self.background.encoding_mut().set_active_levels(bg);
    }

    pub fn active_levels(&self) -> [usize; 3] {
        [
            self.background.enc.active_levels(),
            self.source.enc.active_levels(),
            self.target.enc.active_levels(),
        ]
    }

    pub fn set_active_levels(&mut self, levels: [usize; 3]) {
        self.background.enc.set_active_levels(levels[0]);
        self.source.enc.set_active_levels(levels[1]);
        self.target.enc.set_active_levels(levels[2]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_to_edit_ratio() {
        let b = FieldBundle::new(ModelConfig::default(), 0);
        let (_, src, tgt) = b.param_counts();
        assert!(src > tgt, "source {src} target {tgt}");
    }

    #[test]
    fn checksums_track_parts() {
        let mut b = FieldBundle::new(ModelConfig::tiny(), 0);
        let before = [Part::Background, Part::Source, Part::Target].map(|p| b.checksum(p));
        b.target.color.params_mut()[0] += 1.0;
        assert_eq!(before[0], b.checksum(Part::Background));
        assert_eq!(before[1], b.checksum(Part::Source));
        assert_ne!(before[2], b.checksum(Part::Target));
    }

    #[test]
    fn target_sdf_and_feature_match_source_at_init() {
        use rand::Rng;
        let b = FieldBundle::new(ModelConfig::tiny(), 5);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let x = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            assert_eq!(b.sdf_source(&x), b.sdf_target(&x));
        }
    }
}
