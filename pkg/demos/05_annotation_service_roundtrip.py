"""
Human-in-the-loop annotation over the REST service
==================================================

The human estimator publishes a batch to the annotation service and blocks,
polling until an annotator labels every sample. Here the "human" is a few
lines of requests calls against the same REST API the browser UI uses; in a
real run you would open the served UI instead and click through the batch.
"""

import threading
import time

import requests

from promptcal import AnnotationBatch, ClassSchema, human_annotate
from promptcal.annotation_service import AnnotationServer, ServiceState

schema = ClassSchema(("Yes", "No"))
state = ServiceState()
server = AnnotationServer(state)
server.start()
print("service listening on", server.base_url)

batch = AnnotationBatch(
    batch_id="",
    records=[(i, f"is sample {i} objectionable?") for i in range(3)],
    label_schema=schema,
    task_description="flag objectionable content",
)

outcome = {}

def blocked_pipeline():
    # This is what the calibration loop does while waiting for a human.
    outcome["labels"] = human_annotate(batch, state, poll_interval=0.1)

worker = threading.Thread(target=blocked_pipeline)
worker.start()
time.sleep(0.2)

# Act as the annotator through the REST API.
pending = requests.get(f"{server.base_url}/api/batches").json()["batches"]
print("pending batches:", pending)
batch_id = pending[0]["batch_id"]

detail = requests.get(f"{server.base_url}/api/batches/{batch_id}").json()
labels = {str(r["record_id"]): ("Yes" if r["record_id"] == 0 else "No") for r in detail["records"]}
requests.post(f"{server.base_url}/api/batches/{batch_id}/labels", json={"labels": labels})

worker.join()
server.stop()
print("the blocked estimator received:", {k: str(v) for k, v in outcome["labels"].items()})
