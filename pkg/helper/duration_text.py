class DurationText:
    """
    Turn a number of seconds into English words for policy rendering.
    Supports durations from 0 up to 2^32 - 1 seconds.
    """

    units = [
        ("day", 86400),
        ("hour", 3600),
        ("minute", 60),
        ("second", 1),
    ]

    @classmethod
    def chunk_to_text(cls, count, unit):
        return f"{count} {unit}" + ("" if count == 1 else "s")

    @classmethod
    def convert(cls, seconds):
        if not isinstance(seconds, int):
            raise ValueError("Duration must be an integer number of seconds.")
        if seconds < 0 or seconds > 0xFFFFFFFF:
            raise ValueError("Duration out of supported range (0-4294967295 seconds).")

        if seconds == 0:
            return "0 seconds"

        words = []
        remaining = seconds
        for unit, size in cls.units:
            count, remaining = divmod(remaining, size)
            if count:
                words.append(cls.chunk_to_text(count, unit))

        if len(words) == 1:
            return words[0]
        return ", ".join(words[:-1]) + " and " + words[-1]


# Convenience function for easy usage
def convert(seconds):
    """
    Convert seconds to an English duration.

    Args:
        seconds: Integer or numeric string

    Returns:
        String such as "30 days" or "1 hour and 30 minutes"
    """
    if isinstance(seconds, str):
        try:
            seconds = int(seconds)
        except ValueError:
            return str(seconds)

    return DurationText.convert(seconds)

# Example:
# print(DurationText.convert(2592000))  # "30 days"
# print(convert("5400"))  # "1 hour and 30 minutes"
