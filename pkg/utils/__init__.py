# Case loading, studies and reporting
