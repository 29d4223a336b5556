// Forecasts a synthetic seasonal dataset with and without prompt retrieval
// and prints the test metrics of both runs.
#include <iostream>

#include "tsarag/tsarag.hpp"

int main() {
    using namespace tsarag;

    dataio::SyntheticSpec spec;
    spec.n = 4;
    spec.t = 1200;
    spec.seed = 7;
    const auto data = dataio::gen_synthetic(spec).data;
    const Split split = chronological_split(data.num_timestamps(), {6, 2, 2});

    for (bool use_pool : {true, false}) {
        ModelConfig config;
        config.use_pool = use_pool;
        config.hyper.seed = 7;
        agents::LocalModel model(config);
        const auto resp = agents::execute_forecast(model, data, split, 12, 12);
        std::cout << (use_pool ? "with pool:    " : "without pool: ");
        for (const auto& [name, value] : resp.metrics) {
            std::cout << name << "=" << value << "  ";
        }
        std::cout << "\n";
    }
    return 0;
}
