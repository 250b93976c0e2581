"""Frame builders shared by the test modules."""

from refpts.core import AgentFrame, ReferencePoint


def make_frame(positions, agent_id=0, velocities=None, sizes=None, confidences=None,
               in_ego_frame=True):
    pts = []
    for i, p in enumerate(positions):
        pts.append(
            ReferencePoint(
                position=tuple(p),
                velocity=None if velocities is None else tuple(velocities[i]),
                size=None if sizes is None else tuple(sizes[i]),
                confidence=0.5 if confidences is None else confidences[i],
                instance_id=i,
            )
        )
    return AgentFrame(agent_id, 0, 0.0, tuple(pts), in_ego_frame=in_ego_frame)
