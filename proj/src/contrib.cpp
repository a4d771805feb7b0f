#include "compbind/contrib/contrib.hpp"

#include <fstream>
#include <iomanip>

#include "compbind/errors.hpp"
#include "compbind/io/png.hpp"

namespace compbind::contrib {

template <typename S>
ContributionMatrix<S> attention_contribution(const encoder::AttentionTrace<S>& trace, int layer) {
  if (layer < 0 || layer >= static_cast<int>(trace.layers.size())) {
    throw ValidationError("layer index " + std::to_string(layer) + " outside the trace");
  }
  const auto& lt = trace.layers[layer];
  const int n = static_cast<int>(lt.input.rows());
  const int dh = trace.head_dim();
  const Eigen::Index d = lt.wo.cols();
  ContributionMatrix<S> out;
  out.layer = layer;
  out.vectors = Mat<S>::Zero(static_cast<Eigen::Index>(n) * n, d);
  for (int h = 0; h < trace.heads; ++h) {
    // Per-token value vectors already mapped through this head's output rows.
    const Mat<S> vo = lt.v.middleCols(h * dh, dh) * lt.wo.middleRows(h * dh, dh);
    const Mat<S>& a = lt.attn[h];
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        if (a(i, j) != S(0)) out.vectors.row(static_cast<Eigen::Index>(i) * n + j) += a(i, j) * vo.row(j);
      }
    }
  }
  out.cont.resize(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) out.cont(i, j) = out.vector(i, j).norm();
  }
  return out;
}

template <typename S>
std::vector<ContributionMatrix<S>> all_contributions(const encoder::AttentionTrace<S>& trace) {
  std::vector<ContributionMatrix<S>> out;
  for (int l = 0; l < static_cast<int>(trace.layers.size()); ++l) out.push_back(attention_contribution(trace, l));
  return out;
}

UnintendedRule rule_for(const encoder::EncoderConfig& config) {
  return config.causal ? UnintendedRule::Causal : UnintendedRule::Bidirectional;
}

namespace {

void require_slots(const synth::PromptTemplate& prompt, int n) {
  if (!prompt.slots.complete()) throw ValidationError("unintended-attention counting needs all four slots");
  for (auto s : prompt.slots.as_array()) {
    if (s >= n) throw ValidationError("prompt slot outside the contribution matrix");
  }
}

}  // namespace

template <typename S>
bool layer_unintended(const synth::PromptTemplate& prompt, const ContributionMatrix<S>& cm, UnintendedRule rule) {
  require_slots(prompt, cm.tokens());
  const auto& s = prompt.slots;
  if (cm.cont(s.o2, s.a1) > cm.cont(s.o2, s.a2)) return true;
  return rule == UnintendedRule::Bidirectional && cm.cont(s.o1, s.a2) > cm.cont(s.o1, s.a1);
}

template <typename S>
int count_unintended(const synth::PromptTemplate& prompt, const std::vector<ContributionMatrix<S>>& layers,
                     UnintendedRule rule) {
  require_slots(prompt, layers.empty() ? static_cast<int>(prompt.length()) : layers.front().tokens());
  int count = 0;
  for (const auto& cm : layers) count += layer_unintended(prompt, cm, rule) ? 1 : 0;
  return count;
}

template <typename S>
MapPair<S> attention_map_vs_contribution(const encoder::AttentionTrace<S>& trace, int layer) {
  MapPair<S> out;
  out.contribution = attention_contribution(trace, layer).cont;
  const auto& lt = trace.layers[layer];
  out.attention = Mat<S>::Zero(lt.attn.front().rows(), lt.attn.front().cols());
  for (const auto& a : lt.attn) out.attention += a;
  out.attention /= static_cast<S>(lt.attn.size());
  return out;
}

#define COMPBIND_INSTANTIATE(S)                                                                              \
  template ContributionMatrix<S> attention_contribution(const encoder::AttentionTrace<S>&, int);             \
  template std::vector<ContributionMatrix<S>> all_contributions(const encoder::AttentionTrace<S>&);          \
  template bool layer_unintended(const synth::PromptTemplate&, const ContributionMatrix<S>&, UnintendedRule); \
  template int count_unintended(const synth::PromptTemplate&, const std::vector<ContributionMatrix<S>>&,      \
                                UnintendedRule);                                                             \
  template MapPair<S> attention_map_vs_contribution(const encoder::AttentionTrace<S>&, int);
COMPBIND_INSTANTIATE(float)
COMPBIND_INSTANTIATE(double)
#undef COMPBIND_INSTANTIATE

double UnintendedReport::mean() const {
  if (counts.empty()) return 0.0;
  double s = 0.0;
  for (int c : counts) s += c;
  return s / static_cast<double>(counts.size());
}

bool UnintendedReport::operator==(const UnintendedReport& o) const {
  if (counts != o.counts || histogram != o.histogram || rows.size() != o.rows.size()) return false;
  for (std::size_t p = 0; p < rows.size(); ++p) {
    if (rows[p].size() != o.rows[p].size()) return false;
    for (std::size_t l = 0; l < rows[p].size(); ++l) {
      const auto& x = rows[p][l];
      const auto& y = o.rows[p][l];
      if (x.cont_o2a1 != y.cont_o2a1 || x.cont_o2a2 != y.cont_o2a2 || x.cont_o1a1 != y.cont_o1a1 ||
          x.cont_o1a2 != y.cont_o1a2 || x.unintended != y.unintended) {
        return false;
      }
    }
  }
  return true;
}

UnintendedReport unintended_report(const EncoderUnderTest& enc, const std::string& dataset_tag,
                                   const std::vector<synth::PromptTemplate>& prompts) {
  UnintendedReport r;
  r.encoder_tag = enc.tag;
  r.dataset_tag = dataset_tag;
  r.histogram.assign(enc.config.layers + 1, 0);
  const UnintendedRule rule = rule_for(enc.config);
  for (const auto& prompt : prompts) {
    const auto encoding = encoder::encode<float>(enc.config, enc.params, prompt.tokens);
    const auto layers = all_contributions(encoding.trace);
    std::vector<PromptRow> rows;
    int count = 0;
    for (const auto& cm : layers) {
      const auto& s = prompt.slots;
      PromptRow row;
      row.layer = cm.layer;
      row.cont_o2a1 = cm.cont(s.o2, s.a1);
      row.cont_o2a2 = cm.cont(s.o2, s.a2);
      row.cont_o1a1 = cm.cont(s.o1, s.a1);
      row.cont_o1a2 = cm.cont(s.o1, s.a2);
      row.unintended = layer_unintended(prompt, cm, rule);
      count += row.unintended ? 1 : 0;
      rows.push_back(row);
    }
    r.counts.push_back(count);
    r.rows.push_back(std::move(rows));
    ++r.histogram[count];
  }
  return r;
}

namespace {

void write_rows(std::ofstream& out, const UnintendedReport& r) {
  for (std::size_t p = 0; p < r.rows.size(); ++p) {
    for (const auto& row : r.rows[p]) {
      out << p << ',' << r.encoder_tag << ',' << row.layer << ',' << row.cont_o2a1 << ',' << row.cont_o2a2 << ','
          << row.cont_o1a1 << ',' << row.cont_o1a2 << ',' << (row.unintended ? "true" : "false") << '\n';
    }
  }
}

void write_heatmaps(const std::filesystem::path& dir, const EncoderUnderTest& enc,
                    const std::vector<synth::PromptTemplate>& prompts, int limit) {
  std::filesystem::create_directories(dir);
  const int k = std::min<int>(limit, static_cast<int>(prompts.size()));
  for (int p = 0; p < k; ++p) {
    const auto encoding = encoder::encode<float>(enc.config, enc.params, prompts[p].tokens);
    for (int l = 0; l < enc.config.layers; ++l) {
      const MatD cont = attention_contribution(encoding.trace, l).cont.cast<double>();
      io::write_heatmap_png(dir / (std::to_string(p) + "_" + std::to_string(l) + ".png"), cont);
    }
  }
}

}  // namespace

ComparisonOutput compare_encoders(const EncoderUnderTest& a, const EncoderUnderTest& b,
                                  const std::vector<synth::PromptTemplate>& prompts,
                                  const CompareOptions& options) {
  if (a.config.vocab != b.config.vocab) throw ValidationError("encoders use different tokenizers");
  ComparisonOutput out{unintended_report(a, options.dataset_tag, prompts),
                       unintended_report(b, options.dataset_tag, prompts)};
  if (options.out_dir.empty() || prompts.empty()) return out;

  std::filesystem::create_directories(options.out_dir);
  std::ofstream csv(options.out_dir / "unintended.csv");
  if (!csv) throw RuntimeFailure("cannot write " + (options.out_dir / "unintended.csv").string());
  csv << std::setprecision(9);
  csv << "prompt_id,encoder_tag,layer,cont_o2a1,cont_o2a2,cont_o1a1,cont_o1a2,unintended\n";
  write_rows(csv, out.a);
  write_rows(csv, out.b);

  std::vector<double> ha(out.a.histogram.begin(), out.a.histogram.end());
  std::vector<double> hb(out.b.histogram.begin(), out.b.histogram.end());
  io::write_bar_chart_png(options.out_dir / "histogram.png", {ha, hb});

  write_heatmaps(options.out_dir / "heatmaps" / a.tag, a, prompts, options.heatmap_prompts);
  write_heatmaps(options.out_dir / "heatmaps" / b.tag, b, prompts, options.heatmap_prompts);
  return out;
}

}  // namespace compbind::contrib
