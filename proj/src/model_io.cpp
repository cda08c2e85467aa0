#include "ctbnids/model_io.hpp"

#include <map>
#include <sstream>
#include <vector>

#include "ctbnids/errors.hpp"
#include "ctbnids/text.hpp"

namespace ctbnids {

using ctbn::CtbnModel;
using text::format_number;

std::string write_model(const CtbnModel& model) {
  std::ostringstream out;
  out << "format ctbn-model 1\n";
  for (const auto& [key, value] : model.meta()) out << "meta " << key << ' ' << value << '\n';
  for (const auto& v : model.variables())
    out << "variable " << v.name << ' ' << v.cardinality << (v.toggle ? " toggle" : "") << '\n';
  for (int v = 0; v < model.size(); ++v)
    for (int p : model.cim(v).parents)
      out << "edge " << model.variable(p).name << ' ' << model.variable(v).name << '\n';
  for (int v = 0; v < model.size(); ++v) {
    out << "initial " << model.variable(v).name;
    for (Eigen::Index i = 0; i < model.initial(v).size(); ++i)
      out << ' ' << format_number(model.initial(v)(i));
    out << '\n';
  }
  for (int v = 0; v < model.size(); ++v) {
    const auto& cim = model.cim(v);
    for (int u = 0; u < model.parent_instantiations(v); ++u) {
      out << "cim " << model.variable(v).name;
      const std::vector<int> values = model.parent_values(v, u);
      for (std::size_t i = 0; i < values.size(); ++i)
        out << ' ' << model.variable(cim.parents[i]).name << '=' << values[i];
      out << '\n';
      const Matrix& q = cim.matrices[u].matrix();
      for (Eigen::Index r = 0; r < q.rows(); ++r) {
        out << "row";
        for (Eigen::Index c = 0; c < q.cols(); ++c) out << ' ' << format_number(q(r, c));
        out << '\n';
      }
    }
  }
  return out.str();
}

namespace {

struct PendingCim {
  std::map<int, Matrix> by_instantiation;
};

}  // namespace

CtbnModel read_model(std::string_view content, const std::string& source) {
  CtbnModel model;
  std::vector<std::vector<int>> parents;
  std::vector<PendingCim> cims;
  std::vector<std::pair<int, Vector>> initials;

  bool header_seen = false;
  bool variables_closed = false;  // no variables after the first edge/initial/cim
  int cim_var = -1;
  int cim_u = -1;
  int rows_read = 0;

  auto lookup = [&](std::string_view name, const std::string& where) {
    auto v = model.find(std::string(name));
    if (!v) throw InputError(where + ": unknown variable '" + std::string(name) + "'");
    return *v;
  };

  const std::vector<std::string_view> lines = text::split(content, '\n');
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    const std::string where = text::location(source, ln + 1);
    const std::string_view line = text::trim(lines[ln]);
    if (line.empty() || line.front() == '#') continue;
    const auto tok = text::tokens(line);
    const std::string_view kw = tok[0];

    if (!header_seen) {
      if (tok.size() != 3 || kw != "format" || tok[1] != "ctbn-model")
        throw InputError(where + ": expected 'format ctbn-model 1'");
      if (tok[2] != "1") throw InputError(where + ": unsupported model format version");
      header_seen = true;
      continue;
    }
    if (cim_var >= 0 && kw != "row" && rows_read < model.variable(cim_var).cardinality)
      throw InputError(where + ": CIM block has too few rows");

    if (kw == "meta") {
      if (tok.size() < 2) throw InputError(where + ": meta needs a key");
      const std::string_view rest = text::trim(line.substr(tok[1].data() + tok[1].size() - line.data()));
      model.meta()[std::string(tok[1])] = std::string(rest);
    } else if (kw == "variable") {
      if (variables_closed) throw InputError(where + ": variables must come first");
      if (tok.size() < 3 || tok.size() > 4 || (tok.size() == 4 && tok[3] != "toggle"))
        throw InputError(where + ": expected 'variable <name> <cardinality> [toggle]'");
      const long long card = text::parse_integer(tok[2], where);
      if (card < 1 || card > 1 << 20) throw InputError(where + ": bad cardinality");
      try {
        model.add_variable(std::string(tok[1]), static_cast<int>(card), tok.size() == 4);
      } catch (const InputError& e) {
        throw InputError(where + ": " + e.what());
      }
      parents.emplace_back();
      cims.emplace_back();
    } else if (kw == "edge") {
      variables_closed = true;
      if (tok.size() != 3) throw InputError(where + ": expected 'edge <parent> <child>'");
      const int p = lookup(tok[1], where);
      const int c = lookup(tok[2], where);
      if (p == c) throw InputError(where + ": self edge");
      for (int existing : parents[c])
        if (existing == p) throw InputError(where + ": duplicate edge");
      parents[c].push_back(p);
    } else if (kw == "initial") {
      variables_closed = true;
      if (tok.size() < 2) throw InputError(where + ": expected 'initial <name> <p...>'");
      const int v = lookup(tok[1], where);
      const int card = model.variable(v).cardinality;
      if (static_cast<int>(tok.size()) != card + 2)
        throw InputError(where + ": initial distribution needs " + std::to_string(card) + " entries");
      Vector p(card);
      for (int i = 0; i < card; ++i) p(i) = text::parse_number(tok[i + 2], where);
      initials.emplace_back(v, p);
    } else if (kw == "cim") {
      variables_closed = true;
      if (tok.size() < 2) throw InputError(where + ": expected 'cim <name> ...'");
      const int v = lookup(tok[1], where);
      const auto& ps = parents[v];
      if (tok.size() != ps.size() + 2)
        throw InputError(where + ": CIM header must name every parent of '" +
                         std::string(tok[1]) + "' in edge order");
      int u = 0;
      for (std::size_t i = 0; i < ps.size(); ++i) {
        const std::string_view assignment = tok[i + 2];
        const auto eq = assignment.find('=');
        if (eq == std::string_view::npos || lookup(assignment.substr(0, eq), where) != ps[i])
          throw InputError(where + ": expected '" + model.variable(ps[i]).name + "=<value>'");
        const long long value = text::parse_integer(assignment.substr(eq + 1), where);
        const int card = model.variable(ps[i]).cardinality;
        if (value < 0 || value >= card) throw InputError(where + ": parent value out of range");
        u = u * card + static_cast<int>(value);
      }
      if (cims[v].by_instantiation.count(u)) throw InputError(where + ": duplicate CIM block");
      const int card = model.variable(v).cardinality;
      cims[v].by_instantiation[u] = Matrix::Zero(card, card);
      cim_var = v;
      cim_u = u;
      rows_read = 0;
    } else if (kw == "row") {
      if (cim_var < 0) throw InputError(where + ": row outside a CIM block");
      const int card = model.variable(cim_var).cardinality;
      if (rows_read >= card) throw InputError(where + ": CIM block has too many rows");
      if (static_cast<int>(tok.size()) != card + 1)
        throw InputError(where + ": row needs " + std::to_string(card) + " entries");
      Matrix& m = cims[cim_var].by_instantiation[cim_u];
      for (int c = 0; c < card; ++c) m(rows_read, c) = text::parse_number(tok[c + 1], where);
      ++rows_read;
      continue;
    } else {
      throw InputError(where + ": unknown keyword '" + std::string(kw) + "'");
    }
    if (kw != "row" && kw != "cim") cim_var = -1;
  }
  if (!header_seen) throw InputError(source + ": empty model file");
  if (cim_var >= 0 && rows_read < model.variable(cim_var).cardinality)
    throw InputError(source + ": final CIM block has too few rows");

  for (int v = 0; v < model.size(); ++v) {
    int count = 1;
    for (int p : parents[v]) count *= model.variable(p).cardinality;
    std::vector<ctmc::IntensityMatrix> matrices;
    for (int u = 0; u < count; ++u) {
      auto it = cims[v].by_instantiation.find(u);
      if (it == cims[v].by_instantiation.end())
        throw InputError(source + ": missing CIM block for '" + model.variable(v).name + "'");
      try {
        matrices.emplace_back(it->second);
      } catch (const InputError& e) {
        throw InputError(source + ": CIM of '" + model.variable(v).name + "': " + e.what());
      }
    }
    if (static_cast<int>(cims[v].by_instantiation.size()) != count)
      throw InputError(source + ": extra CIM blocks for '" + model.variable(v).name + "'");
    model.set_cim(v, parents[v], std::move(matrices));
  }
  for (const auto& [v, p] : initials) {
    try {
      model.set_initial(v, p);
    } catch (const InputError& e) {
      throw InputError(source + ": " + e.what());
    }
  }
  return model;
}

}  // namespace ctbnids
