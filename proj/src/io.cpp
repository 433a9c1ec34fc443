#include "dotfoundry/io.hpp"

#include "dotfoundry/errors.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

namespace dotfoundry::io {

double round_sig(double value, int digits) {
    if (!std::isfinite(value) || value == 0.0) return value;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", digits, value);
    return std::strtod(buf, nullptr);
}

Json rounded(const Json& j) {
    if (j.is_number_float()) return round_sig(j.get<double>());
    if (j.is_array()) {
        Json out = Json::array();
        for (const auto& v : j) out.push_back(rounded(v));
        return out;
    }
    if (j.is_object()) {
        Json out = Json::object();
        for (auto it = j.begin(); it != j.end(); ++it) out[it.key()] = rounded(it.value());
        return out;
    }
    return j;
}

std::string dump_report(const Json& j) { return rounded(j).dump(2) + "\n"; }

void write_report(const std::filesystem::path& path, const Json& j) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << dump_report(j);
    if (!out) throw Error("write failed: " + path.string());
}

void require_known_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& context) {
    if (!j.is_object()) throw ArgumentError(context + ": expected a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const char* key : allowed) known = known || it.key() == key;
        if (!known) throw ArgumentError(context + ": unknown key '" + it.key() + "'");
    }
}

Json to_json(const FitResult& r) {
    Json j;
    j["model"] = std::string(model_kind_name(r.spec.kind));
    const auto names = r.spec.parameter_names();
    const auto units = r.spec.parameter_units();
    Json params = Json::array();
    for (std::size_t i = 0; i < r.parameters.size(); ++i) {
        params.push_back({{"name", names[i]}, {"unit", units[i]}, {"value", r.parameters[i]},
                          {"uncertainty", r.uncertainties[i]}});
    }
    j["parameters"] = params;
    Json cov = Json::array();
    for (Eigen::Index a = 0; a < r.covariance.rows(); ++a) {
        for (Eigen::Index b = 0; b < r.covariance.cols(); ++b) cov.push_back(r.covariance(a, b));
    }
    j["covariance_row_major"] = cov;
    j["residual_sum_squares"] = r.residual_sum_squares;
    j["converged"] = r.converged;
    j["iterations"] = r.iterations;
    return j;
}

Json to_json(const Measured& m) { return {{"value", m.value}, {"sigma", m.sigma}}; }

Json to_json(const PeakLocation& p) {
    Json j;
    j["model"] = p.model_used == PeakModel::Gaussian ? "gaussian" : "lorentzian";
    j["center_px"] = p.center_px;
    j["sigma_center_px"] = p.sigma_center_px;
    j["center_nm"] = p.center_nm;
    j["sigma_center_nm"] = p.sigma_center_nm;
    j["fit"] = to_json(p.fit);
    return j;
}

Json to_json(const Calibration& c) {
    return {{"nm_per_px", c.nm_per_px},
            {"sigma_nm_per_px", c.sigma_nm_per_px},
            {"source_marks", {c.source_marks.first, c.source_marks.second}},
            {"known_separation_nm", c.known_separation_nm}};
}

Json to_json(const LocalizationReport& r) {
    Json j;
    j["calibration"] = to_json(r.calibration);
    j["origin_px"] = {{"x", r.origin_x_px}, {"y", r.origin_y_px}};
    j["emitter"] = {{"x", to_json(r.emitter.x)},
                    {"y", to_json(r.emitter.y)},
                    {"sample_x_nm", r.emitter_sample_x_nm},
                    {"sample_y_nm", r.emitter_sample_y_nm}};
    Json marks = Json::array();
    for (std::size_t i = 0; i < r.marks.size(); ++i) {
        marks.push_back({{"id", r.mark_ids[i]}, {"x", to_json(r.marks[i].x)}, {"y", to_json(r.marks[i].y)}});
    }
    j["marks"] = marks;
    Json seps = Json::array();
    for (const auto& s : r.separations) {
        seps.push_back({{"mark", s.mark_id},
                        {"delta_x_nm", s.delta_x_nm},
                        {"sigma_x_nm", s.sigma_x_nm},
                        {"delta_y_nm", s.delta_y_nm},
                        {"sigma_y_nm", s.sigma_y_nm}});
    }
    j["separations"] = seps;
    return j;
}

Json to_json(const UncertaintySummary& s) {
    Json j;
    for (const auto* c : {&s.emitter, &s.mark, &s.separation}) {
        j[c->name] = {{"mean_nm", c->mean_nm}, {"samples", c->values_nm.size()}, {"bin_width_nm", c->bin_width_nm},
                      {"counts", c->counts}};
    }
    return j;
}

Json to_json(const PillarDesign& d) {
    return {{"mode", {{"n_phi", d.mode.n_phi}, {"n_r", d.mode.n_r}, {"chi", d.mode.chi}}},
            {"target_ev", d.target_ev},
            {"target_wavelength_nm", energy_to_wavelength_nm(d.target_ev)},
            {"exact_radius_nm", d.exact_radius_nm},
            {"radius_nm", d.radius_nm},
            {"diameter_um", d.diameter_um},
            {"e_mode_ev", d.e_mode_ev},
            {"lambda_mode_nm", d.lambda_mode_nm},
            {"detuning_mev", d.detuning_mev}};
}

Json to_json(const YieldEstimate& y) {
    return {{"yield_fraction", y.yield_fraction}, {"standard_error", y.standard_error},
            {"ci95", {y.ci_low, y.ci_high}},      {"trials", y.trials},
            {"successes", y.successes},           {"infeasible", y.infeasible}};
}

Json to_json(const EfficiencyBudget& b) {
    Json elements = Json::array();
    for (const auto& e : b.elements) {
        elements.push_back({{"name", e.name}, {"transmission", e.transmission}, {"rel_err", e.rel_err}});
    }
    return {{"elements", elements},
            {"overall", {{"transmission", b.overall_transmission}, {"rel_err", b.overall_rel_err}}}};
}

Json to_json(const LifetimeResult& r) {
    return {{"tau_ps", r.tau_ps},
            {"sigma_tau_ps", r.sigma_tau_ps},
            {"window_ps", {r.window.start_ps, r.window.end_ps}},
            {"warnings", r.warnings},
            {"fit", to_json(r.fit)}};
}

Json to_json(const QFactorResult& r) {
    return {{"q", r.q}, {"sigma_q", r.sigma_q}, {"center", r.center}, {"hwhm", r.hwhm}, {"fit", to_json(r.fit)}};
}

Json to_json(const SaturationResult& r) {
    return {{"saturated_counts_per_s", to_json(r.saturated_counts_per_s)},
            {"saturation_power", to_json(r.saturation_power)},
            {"fit", to_json(r.fit)}};
}

Json to_json(const G2Result& r) {
    Json sides = Json::array();
    for (const auto& p : r.side_peaks) sides.push_back({{"order", p.order}, {"area", p.area}});
    return {{"g2", r.g2},
            {"sigma_g2", r.sigma_g2},
            {"integration_halfwidth_ns", r.integration_halfwidth_ns},
            {"central_area", r.central_area},
            {"side_peaks", sides}};
}

std::vector<double> CsvTable::column(std::size_t index) const {
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(r.at(index));
    return out;
}

namespace {

std::string trim(std::string_view s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return std::string(s.substr(a, b - a));
}

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) out.push_back(trim(field));
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void require_header(const CsvTable& t, const std::filesystem::path& path, std::initializer_list<const char*> names) {
    bool ok = t.header.size() == names.size();
    std::size_t i = 0;
    std::string expected;
    for (const char* n : names) {
        if (ok && t.header[i] != n) ok = false;
        expected += (i++ ? "," : "") + std::string(n);
    }
    if (!ok) throw ParseError(path.string(), 1, ParseError::Unit::Line, "expected header '" + expected + "'");
}

}  // namespace

CsvTable read_csv(const std::filesystem::path& path) {
    const std::string text = read_text(path);
    std::istringstream in(text);
    std::string line;
    CsvTable table;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        const auto fields = split(line);
        if (table.header.empty()) {
            table.header = fields;
            continue;
        }
        if (fields.size() != table.header.size()) {
            throw ParseError(path.string(), line_no, ParseError::Unit::Line,
                             "expected " + std::to_string(table.header.size()) + " fields, found " +
                                 std::to_string(fields.size()));
        }
        std::vector<double> row;
        for (const auto& f : fields) {
            double v = 0.0;
            const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
            if (ec != std::errc() || ptr != f.data() + f.size() || f.empty()) {
                throw ParseError(path.string(), line_no, ParseError::Unit::Line, "not a number: '" + f + "'");
            }
            row.push_back(v);
        }
        table.rows.push_back(std::move(row));
    }
    if (table.header.empty()) throw ParseError(path.string(), 1, ParseError::Unit::Line, "empty file");
    return table;
}

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
    out << '\n';
    char buf[64];
    for (const auto& r : rows) {
        for (std::size_t i = 0; i < r.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%.9g", r[i]);
            out << (i ? "," : "") << buf;
        }
        out << '\n';
    }
    if (!out) throw Error("write failed: " + path.string());
}

DecayTrace read_trace(const std::filesystem::path& path) {
    const CsvTable t = read_csv(path);
    require_header(t, path, {"time_ps", "counts"});
    DecayTrace trace{t.column(0), t.column(1), path.filename().string()};
    trace.validate();
    return trace;
}

void write_trace(const std::filesystem::path& path, const DecayTrace& trace) {
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < trace.time_ps.size(); ++i) rows.push_back({trace.time_ps[i], trace.counts[i]});
    write_csv(path, {"time_ps", "counts"}, rows);
}

CoincidenceHistogram read_histogram(const std::filesystem::path& path) {
    const CsvTable t = read_csv(path);
    require_header(t, path, {"delay_ns", "counts"});
    CoincidenceHistogram h;
    h.delay_ns = t.column(0);
    h.counts = t.column(1);
    auto side = path;
    side.replace_extension(".json");
    const auto meta = read_json_file(side);
    try {
        require_known_keys(meta, {"rep_period_ns", "bin_width_ns"}, side.string());
        h.rep_period_ns = meta.at("rep_period_ns").get<double>();
        h.bin_width_ns = meta.at("bin_width_ns").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(side.string(), 0, ParseError::Unit::Byte, e.what());
    }
    h.validate();
    return h;
}

void write_histogram(const std::filesystem::path& path, const CoincidenceHistogram& hist) {
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < hist.delay_ns.size(); ++i) rows.push_back({hist.delay_ns[i], hist.counts[i]});
    write_csv(path, {"delay_ns", "counts"}, rows);
    auto side = path;
    side.replace_extension(".json");
    write_report(side, Json{{"rep_period_ns", hist.rep_period_ns}, {"bin_width_ns", hist.bin_width_ns}});
}

Spectrum read_spectrum(const std::filesystem::path& path) {
    const CsvTable t = read_csv(path);
    Spectrum s;
    if (t.header.size() == 2 && t.header[0] == "energy_ev") {
        s.axis = Spectrum::Axis::EnergyEv;
    } else {
        require_header(t, path, {"wavelength_nm", "counts"});
    }
    s.x = t.column(0);
    s.counts = t.column(1);
    return s;
}

void write_spectrum(const std::filesystem::path& path, const Spectrum& spectrum) {
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < spectrum.x.size(); ++i) rows.push_back({spectrum.x[i], spectrum.counts[i]});
    write_csv(path, {spectrum.axis == Spectrum::Axis::EnergyEv ? "energy_ev" : "wavelength_nm", "counts"}, rows);
}

SaturationSeries read_saturation(const std::filesystem::path& path) {
    const CsvTable t = read_csv(path);
    require_header(t, path, {"power", "counts_per_s"});
    return {t.column(0), t.column(1)};
}

std::vector<BudgetElement> budget_elements_from_json(const nlohmann::json& j) {
    require_known_keys(j, {"elements"}, "budget");
    std::vector<BudgetElement> elements;
    for (const auto& e : j.at("elements")) {
        require_known_keys(e, {"name", "transmission", "rel_err"}, "budget element");
        elements.push_back({e.at("name").get<std::string>(), e.at("transmission").get<double>(),
                            e.at("rel_err").get<double>()});
    }
    return elements;
}

std::vector<BudgetElement> read_budget(const std::filesystem::path& path) {
    const auto j = read_json_file(path);
    try {
        return budget_elements_from_json(j);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path.string(), 0, ParseError::Unit::Byte, e.what());
    }
}

MarkLayout layout_from_json(const nlohmann::json& j) {
    require_known_keys(j, {"arm_length_nm", "arm_width_nm", "calibration", "marks"}, "layout");
    MarkLayout layout;
    layout.arm_length_nm = j.at("arm_length_nm").get<double>();
    layout.arm_width_nm = j.at("arm_width_nm").get<double>();
    for (const auto& m : j.at("marks")) {
        require_known_keys(m, {"id", "x_nm", "y_nm", "search_window_px"}, "layout mark");
        const auto w = m.at("search_window_px").get<std::vector<int>>();
        if (w.size() != 4) throw ArgumentError("layout mark: search_window_px needs [x0, y0, x1, y1]");
        layout.marks.push_back(
            {m.at("id").get<std::string>(), m.at("x_nm").get<double>(), m.at("y_nm").get<double>(), {w[0], w[1], w[2], w[3]}});
    }
    const auto& cal = j.at("calibration");
    require_known_keys(cal, {"mark_a", "mark_b", "axis"}, "layout calibration");
    auto index_of = [&](const std::string& id) {
        for (std::size_t i = 0; i < layout.marks.size(); ++i) {
            if (layout.marks[i].id == id) return i;
        }
        throw ArgumentError("layout calibration: unknown mark '" + id + "'");
    };
    layout.calibration_a = index_of(cal.at("mark_a").get<std::string>());
    layout.calibration_b = index_of(cal.at("mark_b").get<std::string>());
    const std::string axis = cal.value("axis", "x");
    if (axis != "x" && axis != "y") throw ArgumentError("layout calibration: axis must be 'x' or 'y'");
    layout.calibration_axis = axis == "x" ? Axis::X : Axis::Y;
    layout.validate();
    return layout;
}

Json to_json(const MarkLayout& layout) {
    Json marks = Json::array();
    for (const auto& m : layout.marks) {
        marks.push_back({{"id", m.id},
                         {"x_nm", m.x_nm},
                         {"y_nm", m.y_nm},
                         {"search_window_px", {m.window.x0, m.window.y0, m.window.x1, m.window.y1}}});
    }
    return {{"arm_length_nm", layout.arm_length_nm},
            {"arm_width_nm", layout.arm_width_nm},
            {"calibration",
             {{"mark_a", layout.marks.at(layout.calibration_a).id},
              {"mark_b", layout.marks.at(layout.calibration_b).id},
              {"axis", layout.calibration_axis == Axis::X ? "x" : "y"}}},
            {"marks", marks}};
}

MarkLayout read_layout(const std::filesystem::path& path) {
    const auto j = read_json_file(path);
    try {
        return layout_from_json(j);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path.string(), 0, ParseError::Unit::Byte, e.what());
    }
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
    const std::string text = read_text(path);
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path.string(), e.byte, ParseError::Unit::Byte, "invalid JSON");
    }
}

}  // namespace dotfoundry::io
