# normunit/utils/event_publisher.py
import json
import logging
from datetime import datetime

logger = logging.getLogger(__name__)


class EventPublisher:
    """Publishes pipeline milestone events to the log."""

    # Events are kept in memory as well so tests can observe them.
    history = []
    keep_history = False

    @staticmethod
    def publish(event_type, payload):
        """
        Publish a pipeline event.

        Events are structured log lines only; they never enter artifact
        directories, so reruns stay hash-identical.

        Args:
            event_type: Type of event, e.g. 'codebook.fitted'
            payload: JSON-serializable event payload

        Returns:
            Boolean indicating success
        """
        try:
            event = {
                'event_type': event_type,
                'timestamp': datetime.utcnow().isoformat(),
                'service': 'normunit',
                'payload': payload
            }
            logger.info(f"EVENT: {event_type} - {json.dumps(payload, sort_keys=True, default=str)}")
            if EventPublisher.keep_history:
                EventPublisher.history.append(event)
            return True

        except Exception as e:
            logger.error(f"Failed to publish event: {str(e)}")
            return False

    @staticmethod
    def clear():
        EventPublisher.history = []
