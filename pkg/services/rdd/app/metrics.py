from prometheus_client import Counter, Histogram, generate_latest, CONTENT_TYPE_LATEST
from fastapi import Response

# RD analysis metrics
mh_proposals_total = Counter('rdd_mh_proposals_total', 'Total MH proposals', ['move'])
mh_accepted_total = Counter('rdd_mh_accepted_total', 'Total accepted MH proposals', ['move'])
chain_duration_seconds = Histogram('rdd_chain_duration_seconds', 'Wall time of one MCMC chain')
analyses_total = Counter('rdd_analyses_total', 'Total analyses run', ['status'])
analysis_duration_seconds = Histogram('rdd_analysis_duration_seconds', 'Wall time of a full analysis')
draws_analyzed_total = Counter('rdd_draws_analyzed_total', 'Posterior draws turned into comparisons')
clusters_evaluated_total = Counter('rdd_clusters_evaluated_total', 'Distinct local clusters compared')

def record_chain(proposals: dict, accepted: dict, duration: float):
    """Record move counters of a finished chain"""
    for move, count in proposals.items():
        mh_proposals_total.labels(move=move).inc(count)
    for move, count in accepted.items():
        mh_accepted_total.labels(move=move).inc(count)
    chain_duration_seconds.observe(duration)

def record_analysis(status: str, duration: float):
    """Record analysis outcome"""
    analyses_total.labels(status=status).inc()
    analysis_duration_seconds.observe(duration)

def record_draws(draws: int, clusters: int):
    """Record draw post-processing volume"""
    draws_analyzed_total.inc(draws)
    clusters_evaluated_total.inc(clusters)

async def metrics_endpoint():
    """Prometheus metrics endpoint"""
    return Response(generate_latest(), media_type=CONTENT_TYPE_LATEST)
