#include "lfm/pruning/criteria.hpp"

#include <array>
#include <utility>

#include "lfm/core/error.hpp"

namespace lfm {
namespace {

struct Alias {
  std::string_view tag;
  Criterion criterion;
};

constexpr std::array kAliases{
    Alias{"random", Criterion::random},
    Alias{"C_p", Criterion::cluster_proportional},
    Alias{"C_b", Criterion::cluster_balanced},
    Alias{"C_p^-1", Criterion::cluster_proportional_inverse},
    Alias{"C_p⁻¹", Criterion::cluster_proportional_inverse},
    Alias{"C_b^-1", Criterion::cluster_balanced_inverse},
    Alias{"C_b⁻¹", Criterion::cluster_balanced_inverse},
    Alias{"C_b^k", Criterion::cluster_kernel},
    Alias{"C_b^kappa", Criterion::cluster_kernel},
    Alias{"C_b^κ", Criterion::cluster_kernel},
    Alias{"C_b^cs", Criterion::cluster_coreset},
    Alias{"G", Criterion::gradient},
    Alias{"G^-1", Criterion::gradient_inverse},
    Alias{"G⁻¹", Criterion::gradient_inverse},
    Alias{"L", Criterion::loss},
    Alias{"L^-1", Criterion::loss_inverse},
    Alias{"L⁻¹", Criterion::loss_inverse},
};

}  // namespace

Criterion parse_criterion(std::string_view tag) {
  for (const auto& a : kAliases)
    if (a.tag == tag) return a.criterion;
  throw ConfigError("unknown criterion '" + std::string(tag) +
                    "' (expected random, C_p, C_b, C_p^-1, C_b^-1, C_b^k, C_b^cs, G, G^-1, L, L^-1)");
}

std::string criterion_tag(Criterion c) {
  for (const auto& a : kAliases)
    if (a.criterion == c) return std::string(a.tag);
  return "unknown";
}

bool needs_clusters(Criterion c) {
  switch (c) {
    case Criterion::cluster_proportional:
    case Criterion::cluster_balanced:
    case Criterion::cluster_proportional_inverse:
    case Criterion::cluster_balanced_inverse:
    case Criterion::cluster_kernel:
    case Criterion::cluster_coreset:
      return true;
    default:
      return false;
  }
}

bool needs_scores(Criterion c) {
  return c == Criterion::gradient || c == Criterion::gradient_inverse || c == Criterion::loss ||
         c == Criterion::loss_inverse;
}

PruneSelection prune(const LatentDataset& ds, const PruneOptions& opt, Rng& rng,
                     const std::vector<double>* scores, const ClusterModel* clusters) {
  keep_count(ds.size(), opt.pr);  // validates pr
  const std::string tag = criterion_tag(opt.criterion);

  if (opt.criterion == Criterion::random) {
    Rng r = rng.derive("random");
    return select_random(ds, opt.pr, r);
  }
  if (needs_scores(opt.criterion)) {
    if (scores == nullptr)
      throw ConfigError("criterion " + tag + " needs a score table (run `score` first)");
    const bool inverse = opt.criterion == Criterion::gradient_inverse || opt.criterion == Criterion::loss_inverse;
    PruneSelection sel =
        select_by_score(ds, *scores, opt.pr, inverse ? ScoreDirection::lowest : ScoreDirection::highest);
    sel.criterion = tag;
    return sel;
  }

  ClusterModel own;
  if (clusters == nullptr) {
    Rng r = rng.derive("kmeans");
    own = cluster_dataset(ds, opt.k, r, opt.kmeans_iters);
    clusters = &own;
  }
  const bool proportional = opt.criterion == Criterion::cluster_proportional ||
                            opt.criterion == Criterion::cluster_proportional_inverse;
  const QuotaMode mode = opt.mode.value_or(proportional ? QuotaMode::proportional : QuotaMode::balanced);
  const std::vector<std::size_t> quotas = allocate_quota(clusters->cluster_sizes(), opt.pr, mode);

  PruneSelection sel;
  if (opt.criterion == Criterion::cluster_kernel) {
    KernelOptions ko = opt.kernel;
    ko.global = ko.global || opt.global;
    Rng r = rng.derive("rff");
    sel = select_by_kernel(ds, *clusters, quotas, ko, r, opt.pr);
  } else if (opt.criterion == Criterion::cluster_coreset) {
    sel = select_by_coreset(ds, *clusters, quotas, opt.global, opt.pr);
  } else {
    const bool inverse = opt.criterion == Criterion::cluster_balanced_inverse ||
                         opt.criterion == Criterion::cluster_proportional_inverse;
    const DistanceDirection dir =
        opt.direction.value_or(inverse ? DistanceDirection::furthest : DistanceDirection::nearest);
    sel = select_by_distance(ds, *clusters, quotas, dir, opt.pr);
  }
  sel.criterion = tag;
  if (opt.global && (opt.criterion == Criterion::cluster_kernel || opt.criterion == Criterion::cluster_coreset))
    sel.criterion += "-global";
  return sel;
}

}  // namespace lfm
