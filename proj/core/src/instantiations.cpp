// Explicit instantiations of the templated stack for the two supported
// precision modes, keeping downstream translation units lean.

#include "dfrec/config.hpp"
#include "dfrec/pipeline.hpp"
#include "dfrec/provider_build.hpp"
#include "dfrec/train.hpp"

namespace dfrec {

template class ParamStore<float>;
template class ParamStore<double>;
template class Graph<float>;
template class Graph<double>;
template struct Pipeline<float>;
template struct Pipeline<double>;
template class DeskProvider<float>;
template class DeskProvider<double>;
template class AdamW<float>;
template class AdamW<double>;
template class Trainer<float>;
template class Trainer<double>;

template DeskProvider<float> build_desk_provider<float>(const CorpusManifest&, std::uint64_t);
template DeskProvider<double> build_desk_provider<double>(const CorpusManifest&, std::uint64_t);
template void save_provider<float>(const std::filesystem::path&, const DeskProvider<float>&);
template void save_provider<double>(const std::filesystem::path&, const DeskProvider<double>&);
template DeskProvider<float> load_provider<float>(const std::filesystem::path&);
template DeskProvider<double> load_provider<double>(const std::filesystem::path&);

template RecoveryOutput recover<float>(const Pipeline<float>&, const Image&, double, std::uint64_t);
template RecoveryOutput recover<double>(const Pipeline<double>&, const Image&, double, std::uint64_t);

}  // namespace dfrec
