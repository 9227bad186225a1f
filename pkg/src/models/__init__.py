# Data models for problems, patients, scenarios and traces
