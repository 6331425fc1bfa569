#include <stdio.h>

/* Stand-in PoC: the mock guest reacts to running an uploaded program. */
int main(void)
{
	puts("triggering nft set teardown");
	return 0;
}
