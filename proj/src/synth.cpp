#include "gql/synth.hpp"

#include <map>
#include <numeric>
#include <random>
#include <string>

namespace gql {

namespace {

constexpr int kRepairRounds = 2000;

[[noreturn]] void invalid(const std::string& what) {
  throw Error(ErrorCode::InvalidArgument, what);
}

// Independent stream per query, so columns can be regenerated alone.
std::mt19937_64 query_stream(std::uint64_t seed, int query) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(query), 0x5eedu};
  return std::mt19937_64(seq);
}

Dataset skeleton(int m, int n) {
  Dataset ds;
  for (int i = 0; i < m; ++i) ds.objects.push_back("o" + std::to_string(i + 1));
  for (int j = 0; j < n; ++j) ds.queries.push_back("q" + std::to_string(j + 1));
  ds.matrix.resize(m, n);
  ds.priors = Eigen::VectorXd::Constant(m, 1.0 / m);
  return ds;
}

std::vector<int> labels_from_sizes(const std::vector<int>& sizes) {
  std::vector<int> out;
  for (int g = 0; g < static_cast<int>(sizes.size()); ++g) {
    if (sizes[g] <= 0) invalid("group sizes must be positive");
    out.insert(out.end(), sizes[g], g);
  }
  return out;
}

std::vector<std::pair<int, int>> offending_pairs(const Dataset& ds, RowRequirement req) {
  std::vector<std::pair<int, int>> out;
  if (req == RowRequirement::None) return out;
  std::map<std::vector<std::uint8_t>, std::vector<int>> rows;
  for (int i = 0; i < ds.num_objects(); ++i) {
    std::vector<std::uint8_t> r(ds.num_queries());
    for (int j = 0; j < ds.num_queries(); ++j) r[j] = ds.matrix(i, j);
    rows[r].push_back(i);
  }
  for (const auto& [row, members] : rows) {
    for (std::size_t a = 0; a < members.size(); ++a)
      for (std::size_t b = a + 1; b < members.size(); ++b)
        if (req == RowRequirement::Distinct ||
            ds.group_of(members[a]) != ds.group_of(members[b]))
          out.emplace_back(members[a], members[b]);
  }
  return out;
}

// Regenerates random columns, keeping a new column only when it does not
// add violations, until none remain or the retry budget runs out.
template <typename Column>
void repair(Dataset& ds, RowRequirement req, std::vector<std::mt19937_64>& streams,
            std::mt19937_64& picker, Column&& column, GenReport& report) {
  auto bad = offending_pairs(ds, req).size();
  for (int round = 0; round < kRepairRounds && bad > 0; ++round) {
    const int q = std::uniform_int_distribution<int>(0, ds.num_queries() - 1)(picker);
    const Eigen::Matrix<std::uint8_t, Eigen::Dynamic, 1> saved = ds.matrix.col(q);
    column(q, streams[q]);
    ++report.resampled_columns;
    const auto now = offending_pairs(ds, req).size();
    if (now <= bad) {
      bad = now;
    } else {
      ds.matrix.col(q) = saved;
    }
  }
  report.unresolved = offending_pairs(ds, req);
}

bool majority(int ones, int total) { return 2 * ones >= total; }

}  // namespace

Dataset gen_group_dataset(const GroupGenParams& params, GenReport* report) {
  const auto labels = labels_from_sizes(params.group_sizes);
  const int m = static_cast<int>(labels.size());
  const int n = params.num_queries;
  const int groups = static_cast<int>(params.group_sizes.size());
  if (n <= 0) invalid("need at least one query");
  if (!params.correlations.empty() && static_cast<int>(params.correlations.size()) != n)
    invalid("one correlation pair per query");
  const auto& rect = params.rectangle;
  if (!(rect.d1 >= 0.0 && rect.d1 <= 0.5 && rect.d2 >= 0.0 && rect.d2 <= 0.5))
    invalid("rectangle sides must lie in [0, 0.5]");

  Dataset ds = skeleton(m, n);
  ds.object_groups = labels;
  ds.identification = Identification::Group;

  GenReport local;
  local.correlations.resize(n);
  std::vector<std::mt19937_64> streams;
  for (int q = 0; q < n; ++q) {
    streams.push_back(query_stream(params.seed, q));
    auto& rng = streams.back();
    Correlation c;
    if (params.correlations.empty()) {
      c.w = std::uniform_real_distribution<double>(0.5, 0.5 + rect.d2)(rng);
      c.b = std::uniform_real_distribution<double>(0.5, 0.5 + rect.d1)(rng);
    } else {
      c = params.correlations[q];
    }
    if (!(c.w >= 0.5 && c.w <= 1.0 && c.b >= 0.5 && c.b <= 1.0))
      invalid("correlations must lie in [0.5, 1]");
    local.correlations[q] = c;
  }

  auto column = [&](int q, std::mt19937_64& rng) {
    const auto c = local.correlations[q];
    const int x = std::bernoulli_distribution(0.5)(rng);
    std::vector<int> b(groups);
    for (int g = 0; g < groups; ++g) b[g] = std::bernoulli_distribution(c.b)(rng) ? x : 1 - x;
    for (int i = 0; i < m; ++i) {
      const int bi = b[labels[i]];
      ds.matrix(i, q) = static_cast<std::uint8_t>(std::bernoulli_distribution(c.w)(rng) ? bi : 1 - bi);
    }
  };
  for (int q = 0; q < n; ++q) column(q, streams[q]);
  std::mt19937_64 picker(params.seed ^ 0x9e3779b97f4a7c15ull);
  repair(ds, params.require, streams, picker, column, local);
  if (report) *report = std::move(local);
  return ds;
}

Dataset gen_querygroup_dataset(const QueryGroupGenParams& params, GenReport* report) {
  const auto qlabels = labels_from_sizes(params.query_group_sizes);
  const int n = static_cast<int>(qlabels.size());
  const int m = params.num_objects;
  if (m <= 0) invalid("need at least one object");
  if (!(params.gamma_max >= 0.5 && params.gamma_max <= 1.0))
    invalid("gamma_max must lie in [0.5, 1]");

  Dataset ds = skeleton(m, n);
  ds.query_groups = qlabels;
  ds.identification = Identification::Object;

  GenReport local;
  local.correlations.resize(n);
  // gamma_b is drawn once per query group, from the group's own stream.
  std::vector<double> group_gamma(params.query_group_sizes.size());
  for (std::size_t g = 0; g < group_gamma.size(); ++g) {
    auto rng = query_stream(params.seed, -1 - static_cast<int>(g));
    group_gamma[g] = std::uniform_real_distribution<double>(0.5, params.gamma_max)(rng);
  }
  std::vector<std::mt19937_64> streams;
  for (int q = 0; q < n; ++q) {
    streams.push_back(query_stream(params.seed, q));
    local.correlations[q] = {1.0, group_gamma[qlabels[q]]};
  }
  auto column = [&](int q, std::mt19937_64& rng) {
    const double gb = group_gamma[qlabels[q]];
    const int x = std::bernoulli_distribution(0.5)(rng);
    for (int i = 0; i < m; ++i)
      ds.matrix(i, q) = static_cast<std::uint8_t>(std::bernoulli_distribution(gb)(rng) ? x : 1 - x);
  };
  for (int q = 0; q < n; ++q) column(q, streams[q]);
  std::mt19937_64 picker(params.seed ^ 0x9e3779b97f4a7c15ull);
  repair(ds, params.require, streams, picker, column, local);
  if (report) *report = std::move(local);
  return ds;
}

std::vector<Correlation> estimate_params(const Dataset& ds) {
  if (!ds.object_groups) invalid("parameter estimation needs object groups");
  const int groups = ds.num_object_groups();
  std::vector<std::vector<int>> members(groups);
  for (int i = 0; i < ds.num_objects(); ++i) members[ds.group_of(i)].push_back(i);
  std::vector<Correlation> out(ds.num_queries());
  for (int q = 0; q < ds.num_queries(); ++q) {
    int votes = 0;
    std::vector<int> b(groups);
    double w_sum = 0.0;
    for (int g = 0; g < groups; ++g) {
      int ones = 0;
      for (int i : members[g]) ones += ds.response(i, q);
      const int size = static_cast<int>(members[g].size());
      b[g] = majority(ones, size);
      w_sum += double(b[g] ? ones : size - ones) / size;
      votes += b[g];
    }
    const int x = majority(votes, groups);
    int agree = 0;
    for (int g = 0; g < groups; ++g) agree += b[g] == x;
    out[q] = {w_sum / groups, double(agree) / groups};
  }
  return out;
}

std::vector<int> wiser_object_group_sizes() {
  return {45, 38, 32, 28, 24, 21, 19, 17, 15, 13, 11, 10, 9, 7, 5, 4};
}

std::vector<int> wiser_query_group_sizes() { return {14, 12, 10, 9, 8, 7, 6, 5, 4, 4}; }

}  // namespace gql
