#include "dattn/report.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "dattn/error.hpp"

namespace dattn {

namespace fs = std::filesystem;

std::string lambda_table_markdown(const CsvTable& sweep) {
  const std::size_t lc = sweep.column("lambda_init");
  sweep.column("accuracy");
  sweep.column("asr");
  std::ostringstream os;
  os << "| lambda_init |";
  for (const auto& row : sweep.rows) os << ' ' << row[lc] << " |";
  os << "\n|---|";
  for (std::size_t i = 0; i < sweep.rows.size(); ++i) os << "---|";
  for (const char* metric : {"accuracy", "asr"}) {
    os << "\n| " << (std::string(metric) == "asr" ? "ASR" : "Accuracy") << " |";
    for (std::size_t r = 0; r < sweep.rows.size(); ++r) os << ' ' << format_number(sweep.number(r, metric)) << " |";
  }
  os << '\n';
  return os.str();
}

namespace {

bool per_model_metric(const std::string& metric) { return metric == "mean_cw_l2" || metric == "mean_lipschitz"; }

CsvTable plot_table(const std::string& source) {
  CsvTable t;
  t.comments = {"source: " + source};
  t.columns = {"x", "series", "y"};
  return t;
}

}  // namespace

CsvTable depth_panel(const CsvTable& sweep, const std::string& metric) {
  sweep.column("depth");
  sweep.column("attention_kind");
  sweep.column("epsilon");
  sweep.column(metric);
  CsvTable t = plot_table("depth_sweep.csv");
  std::set<std::pair<std::string, std::string>> seen;
  for (std::size_t r = 0; r < sweep.rows.size(); ++r) {
    const std::string& kind = sweep.text(r, "attention_kind");
    std::string series = kind;
    if (!per_model_metric(metric)) series += " eps=" + sweep.text(r, "epsilon");
    if (!seen.insert({sweep.text(r, "depth"), series}).second) continue;
    t.add_row({sweep.text(r, "depth"), series, format_number(sweep.number(r, metric))});
  }
  return t;
}

std::vector<fs::path> emit_report(const fs::path& dir) {
  std::vector<fs::path> written;
  std::ostringstream md;
  md << "# Results\n";
  bool found = false;
  auto emit = [&](const std::string& name, const CsvTable& t) {
    write_csv(dir / name, t);
    written.push_back(dir / name);
    md << "- `" << name << "`\n";
  };

  if (fs::exists(dir / "lambda_sweep.csv")) {
    found = true;
    const CsvTable sweep = read_csv(dir / "lambda_sweep.csv");
    md << "\n## lambda_init sweep\n\n" << lambda_table_markdown(sweep) << '\n';
    CsvTable t;
    t.columns = {"lambda_init", "accuracy", "asr"};
    for (std::size_t r = 0; r < sweep.rows.size(); ++r)
      t.add_row({sweep.text(r, "lambda_init"), sweep.text(r, "accuracy"), sweep.text(r, "asr")});
    emit("table1.csv", t);
    std::ofstream(dir / "table1.md") << lambda_table_markdown(sweep);
    written.push_back(dir / "table1.md");
  }

  if (fs::exists(dir / "attack_summary.csv")) {
    found = true;
    const CsvTable s = read_csv(dir / "attack_summary.csv");
    md << "\n## Attack success rate\n\n";
    CsvTable t = plot_table("attack_summary.csv");
    for (std::size_t r = 0; r < s.rows.size(); ++r)
      t.add_row({s.text(r, "budget"), s.text(r, "attention") + " " + s.text(r, "attack_kind"), s.text(r, "asr")});
    emit("fig2_asr.csv", t);
  }

  if (fs::exists(dir / "depth_sweep.csv")) {
    found = true;
    const CsvTable s = read_csv(dir / "depth_sweep.csv");
    md << "\n## Depth sweep\n\n";
    emit("fig3a_pgd_asr.csv", depth_panel(s, "asr"));
    emit("fig3b_fgsm_asr.csv", depth_panel(s, "asr_fgsm"));
    emit("fig3c_cw_l2.csv", depth_panel(s, "mean_cw_l2"));
    emit("fig3d_mean_lipschitz.csv", depth_panel(s, "mean_lipschitz"));
  }

  if (fs::exists(dir / "lipschitz_summary.csv")) {
    found = true;
    const CsvTable s = read_csv(dir / "lipschitz_summary.csv");
    md << "\n## Layer Lipschitz estimates\n\n";
    CsvTable t = plot_table("lipschitz_summary.csv");
    for (std::size_t r = 0; r < s.rows.size(); ++r)
      t.add_row({s.text(r, "layer"), s.text(r, "attention") + " depth " + s.text(r, "depth"), s.text(r, "mean_estimate")});
    emit("fig4_lipschitz.csv", t);
  }

  if (fs::exists(dir / "alignment_hist.csv")) {
    found = true;
    const CsvTable s = read_csv(dir / "alignment_hist.csv");
    md << "\n## Branch gradient alignment\n\n";
    CsvTable t = plot_table("alignment_hist.csv");
    for (std::size_t r = 0; r < s.rows.size(); ++r) {
      const double center = 0.5 * (s.number(r, "bin_low") + s.number(r, "bin_high"));
      t.add_row({format_number(center), "layer " + s.text(r, "layer"), s.text(r, "count")});
    }
    emit("fig5_alignment.csv", t);
  }

  if (!found) throw DataError("report: no results CSV in " + dir.string());
  std::ofstream(dir / "report.md") << md.str();
  written.push_back(dir / "report.md");
  return written;
}

}  // namespace dattn
