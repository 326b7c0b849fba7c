//! t-SNE of penultimate features, cluster statistics and report figures.

mod embedding;
mod figures;
mod stats;
mod svg;
mod tsne;

pub use embedding::{build_tsne_figure, extract_manifest_features, mean_closest_run, EmbeddingSet, TsneFigure};
pub use figures::{
    class_color, hex, render_bar_chart_svg, render_box_plot_svg, render_confusion_svg, render_report_figures,
    render_tsne_svg, PALETTE,
};
pub use stats::{cross_domain_ratio, silhouette};
pub use svg::write_figure;
pub use tsne::{max_perplexity, tsne_embed, TsneConfig, TsneInit};
