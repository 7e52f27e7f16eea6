# Central processing unit: beam refinement, precoder orchestration, experiments
