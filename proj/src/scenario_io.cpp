// SPDX-License-Identifier: Apache-2.0

#include "ncs/scenario_io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <vector>

#include <toml.hpp>

namespace ncs {

namespace {

[[noreturn]] void fail(int line, const std::string& msg) {
  throw ConfigError("scenario line " + std::to_string(line) + ": " + msg);
}

int line_of(const toml::node& n) { return static_cast<int>(n.source().begin.line); }

// Typed access to one table; finish() rejects keys nobody asked for.
class Reader {
 public:
  Reader(const toml::table& t, std::string name) : t_(t), name_(std::move(name)) {}

  bool has(const std::string& key) const { return t_.contains(key); }

  double number(const std::string& key) {
    const toml::node& n = take(key);
    if (const auto v = n.value<double>(); v && !n.is_boolean()) return *v;
    fail(line_of(n), "'" + key + "' must be a number");
  }
  int integer(const std::string& key) {
    const int line = line_of(*t_.get(key));
    const double d = number(key);
    if (d != std::floor(d) || std::abs(d) > 1e9) fail(line, "'" + key + "' must be an integer");
    return static_cast<int>(d);
  }
  std::string text(const std::string& key) {
    const toml::node& n = take(key);
    if (const auto v = n.value<std::string>()) return *v;
    fail(line_of(n), "'" + key + "' must be a string");
  }
  std::vector<double> numbers(const std::string& key) {
    const toml::node& n = take(key);
    if (const toml::array* a = n.as_array()) {
      std::vector<double> out;
      for (const toml::node& e : *a) {
        const auto v = e.value<double>();
        if (!v || e.is_boolean()) fail(line_of(n), "'" + key + "' must be a numeric array");
        out.push_back(*v);
      }
      return out;
    }
    if (const auto v = n.value<double>(); v && !n.is_boolean()) return {*v};
    fail(line_of(n), "'" + key + "' must be a numeric array");
  }
  Vec3 vec3(const std::string& key) {
    const int line = has(key) ? line_of(*t_.get(key)) : line_of(t_);
    const auto a = numbers(key);
    if (a.size() != 3) fail(line, "'" + key + "' needs 3 components");
    return {a[0], a[1], a[2]};
  }
  int line(const std::string& key) const { return line_of(*t_.get(key)); }
  void skip(const std::string& key) { used_.insert(key); }
  void finish() const {
    for (const auto& [key, v] : t_)
      if (!used_.count(std::string(key.str())))
        fail(line_of(v), "unknown key '" + std::string(key.str()) + "'" + where());
  }

 private:
  std::string where() const { return name_.empty() ? "" : " in [" + name_ + "]"; }
  const toml::node& take(const std::string& key) {
    const toml::node* n = t_.get(key);
    if (!n) fail(line_of(t_), "missing key '" + key + "'" + where());
    used_.insert(key);
    return *n;
  }

  const toml::table& t_;
  std::string name_;
  std::set<std::string> used_;
};

// [[name]] entries in file order; a plain [name] table is an error.
std::vector<const toml::table*> table_array(const toml::table& root, const std::string& name) {
  std::vector<const toml::table*> out;
  const toml::node* n = root.get(name);
  if (!n) return out;
  const toml::array* a = n->as_array();
  if (!a || !a->is_array_of_tables()) fail(line_of(*n), "use [[" + name + "]]");
  for (const toml::node& e : *a) out.push_back(e.as_table());
  return out;
}

}  // namespace

Scenario parse_scenario(std::string_view text) {
  toml::table root;
  try {
    root = toml::parse(text);
  } catch (const toml::parse_error& e) {
    fail(static_cast<int>(e.source().begin.line), std::string(e.description()));
  }

  Reader top(root, "");
  for (const auto& [key, v] : root) {
    const std::string name(key.str());
    const bool known = name == "radio" || name == "station" || name == "target";
    if ((v.is_table() || v.is_array_of_tables()) && !known) fail(line_of(v), "unknown table [" + name + "]");
    if (known) top.skip(name);
  }
  const std::string duplex = top.text("duplex");
  if (duplex != "FD" && duplex != "HD") fail(top.line("duplex"), "duplex must be FD or HD");
  const int num_tx = top.integer("num_tx");
  std::vector<double> pair_rcs;
  if (top.has("pair_rcs")) pair_rcs = top.numbers("pair_rcs");
  top.finish();

  RadioConfig radio;
  if (const toml::node* node = root.get("radio")) {
    const toml::table* t = node->as_table();
    if (!t) fail(line_of(*node), "[radio] is a single table");
    Reader r(*t, "radio");
    auto opt = [&](const char* key, double& field) {
      if (r.has(key)) field = r.number(key);
    };
    auto opt_int = [&](const char* key, int& field) {
      if (r.has(key)) field = r.integer(key);
    };
    opt("carrier_freq", radio.carrier_freq);
    opt("subcarrier_spacing", radio.subcarrier_spacing);
    opt_int("num_subcarriers", radio.num_subcarriers);
    opt_int("num_symbols", radio.num_symbols);
    opt("pulse_interval", radio.pulse_interval);
    if (r.has("panel")) {
      const int line = r.line("panel");
      const auto p = r.numbers("panel");
      if (p.size() != 2 || p[0] != std::floor(p[0]) || p[1] != std::floor(p[1]))
        fail(line, "panel needs two integer sizes");
      radio.panel_x = static_cast<int>(p[0]);
      radio.panel_y = static_cast<int>(p[1]);
    }
    if (r.has("tx_power_dbm")) radio.tx_power_dbm = r.numbers("tx_power_dbm");
    opt("tx_gain_dbi", radio.tx_gain_dbi);
    opt("rx_gain_dbi", radio.rx_gain_dbi);
    opt("noise_density_dbm_hz", radio.noise_density_dbm_hz);
    opt("noise_figure_db", radio.noise_figure_db);
    opt("rcs", radio.rcs);
    r.finish();
  }

  std::vector<Vec3> positions, boresights;
  for (const toml::table* t : table_array(root, "station")) {
    Reader r(*t, "station");
    positions.push_back(r.vec3("position"));
    const Vec3 z = r.vec3("boresight");
    if (!(z.norm() > 0)) fail(r.line("boresight"), "boresight must be nonzero");
    boresights.push_back(z);
    r.finish();
  }
  std::vector<Target> targets;
  for (const toml::table* t : table_array(root, "target")) {
    Reader r(*t, "target");
    Target tg;
    tg.position = r.vec3("position");
    tg.velocity = r.has("velocity") ? r.vec3("velocity") : Vec3::Zero();
    targets.push_back(tg);
    r.finish();
  }
  if (positions.empty()) throw ConfigError("scenario has no [[station]] entries");
  Scenario sc = make_scenario(duplex == "FD" ? Duplex::FD : Duplex::HD, positions, boresights, targets, radio, num_tx);
  if (!pair_rcs.empty()) {
    sc.pair_rcs = pair_rcs;
    sc.validate();
  }
  return sc;
}

Scenario load_scenario(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open scenario file " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_scenario(ss.str());
}

namespace {

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string vec(const Vec3& v) { return "[" + num(v(0)) + ", " + num(v(1)) + ", " + num(v(2)) + "]"; }

}  // namespace

std::string format_scenario(const Scenario& sc) {
  std::ostringstream os;
  const auto& r = sc.radio;
  os << "duplex = \"" << (sc.duplex == Duplex::FD ? "FD" : "HD") << "\"\n";
  os << "num_tx = " << sc.num_tx << "\n";
  if (!sc.pair_rcs.empty()) {
    os << "pair_rcs = [";
    for (std::size_t n = 0; n < sc.pair_rcs.size(); ++n) os << (n ? ", " : "") << num(sc.pair_rcs[n]);
    os << "]\n";
  }
  os << "\n[radio]\n";
  os << "carrier_freq = " << num(r.carrier_freq) << "\n";
  os << "subcarrier_spacing = " << num(r.subcarrier_spacing) << "\n";
  os << "num_subcarriers = " << r.num_subcarriers << "\n";
  os << "num_symbols = " << r.num_symbols << "\n";
  os << "pulse_interval = " << num(r.pulse_interval) << "\n";
  os << "panel = [" << r.panel_x << ", " << r.panel_y << "]\n";
  os << "tx_power_dbm = [";
  for (std::size_t n = 0; n < r.tx_power_dbm.size(); ++n) os << (n ? ", " : "") << num(r.tx_power_dbm[n]);
  os << "]\n";
  os << "tx_gain_dbi = " << num(r.tx_gain_dbi) << "\n";
  os << "rx_gain_dbi = " << num(r.rx_gain_dbi) << "\n";
  os << "noise_density_dbm_hz = " << num(r.noise_density_dbm_hz) << "\n";
  os << "noise_figure_db = " << num(r.noise_figure_db) << "\n";
  os << "rcs = " << num(r.rcs) << "\n";
  for (const auto& bs : sc.stations)
    os << "\n[[station]]\nposition = " << vec(bs.position) << "\nboresight = " << vec(bs.boresight) << "\n";
  for (const auto& t : sc.targets)
    os << "\n[[target]]\nposition = " << vec(t.position) << "\nvelocity = " << vec(t.velocity) << "\n";
  return os.str();
}

}  // namespace ncs
